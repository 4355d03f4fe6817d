"""Serialization of process specifications to/from JSON documents.

The config document is a key-value tree with typed leaves; all fields are
mandatory except the finite-space embedding and drift/kernel hint metadata.
Specs built from Python callables (rather than expression strings) are not
serializable; they get the fingerprint "opaque".
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .core import (AtomicKernel, DensityKernel, DriftField, FiniteRateMatrix,
                   InitialLaw, JumpKernel, LevyKernel, ProcessSpec, StateSpace,
                   TiltedKernel, TruncationDelta)
from .errors import ConfigError


class SerializationError(ValueError):
    """Spec contains opaque callables and cannot be written to a config."""


# -- state space -------------------------------------------------------------

def space_to_config(space: StateSpace) -> dict:
    doc = {"kind": space.kind, "dimension": space.dim,
           "bounds": space.bounds.tolist()}
    if space.kind == "finite":
        doc["n_states"] = space.n_states
        doc["embedding"] = space.embedding.tolist()
    if space.kind == "lattice":
        doc["step"] = space.step
    return doc


def space_from_config(doc: dict) -> StateSpace:
    kind = doc.get("kind")
    if kind == "finite":
        return StateSpace.finite(int(doc["n_states"]), doc.get("embedding"))
    if kind == "lattice":
        return StateSpace.lattice(int(doc["dimension"]), float(doc["step"]),
                                  doc["bounds"])
    if kind == "continuous":
        return StateSpace.continuous(int(doc["dimension"]), doc["bounds"])
    raise ConfigError(f"unknown state space kind {kind!r}")


# -- drift -------------------------------------------------------------------

def drift_to_config(drift: DriftField) -> dict:
    if drift.is_zero:
        return {"kind": "zero", "dimension": drift.dim}
    if drift.expressions is not None:
        return {"kind": "expressions", "components": list(drift.expressions)}
    raise SerializationError("drift field has no expression form")


def drift_from_config(doc: dict) -> DriftField:
    kind = doc.get("kind")
    if kind == "zero":
        return DriftField.zero(int(doc["dimension"]))
    if kind == "constant":
        return DriftField.constant(doc["value"])
    if kind == "expressions":
        return DriftField.from_expressions(doc["components"])
    raise ConfigError(f"unknown drift kind {kind!r}")


# -- kernels -----------------------------------------------------------------

def kernel_to_config(kernel: JumpKernel) -> dict:
    if isinstance(kernel, FiniteRateMatrix):
        if callable(kernel.rates):
            raise SerializationError("time-dependent rate matrix given as a callable")
        return {"kind": "finite_rate_matrix", "rates": kernel.rates.tolist(),
                "embedding": kernel.embedding.tolist()}
    if isinstance(kernel, AtomicKernel):
        atoms = []
        for xi, _fn, src in kernel.atom_list:
            if src is None:
                raise SerializationError("atomic rate given as a callable")
            atoms.append({"jump": xi.tolist(), "rate": src})
        return {"kind": "atomic", "atoms": atoms, "dimension": kernel.dim}
    if isinstance(kernel, LevyKernel):
        doc = {"kind": "levy",
               "atoms": [{"jump": xi.tolist(), "weight": w} for xi, w in kernel.levy_atoms],
               "drift": kernel.drift.tolist(), "dimension": kernel.dim}
        if kernel._density_fn is not None:
            if kernel._density_src is None:
                raise SerializationError("Levy density given as a callable")
            doc["density"] = kernel._density_src
            doc["support"] = [list(iv) for iv in kernel.support]
        return doc
    if isinstance(kernel, DensityKernel):
        if kernel._src is None:
            raise SerializationError("density given as a callable")
        return {"kind": "density", "density": kernel._src,
                "support": [list(iv) for iv in kernel.support]}
    if isinstance(kernel, TiltedKernel):
        if kernel.tilt_expression is None:
            raise SerializationError("tilt given as a callable")
        return {"kind": "tilted", "base": kernel_to_config(kernel.base),
                "tilt": kernel.tilt_expression}
    raise SerializationError(f"cannot serialize kernel {type(kernel).__name__}")


def kernel_from_config(doc: dict) -> JumpKernel:
    kind = doc.get("kind")
    try:
        if kind == "finite_rate_matrix":
            return FiniteRateMatrix(rates=np.asarray(doc["rates"], dtype=float),
                                    embedding=doc.get("embedding"))
        if kind == "atomic":
            atoms = tuple((a["jump"], a["rate"]) for a in doc["atoms"])
            return AtomicKernel(atom_list=atoms, dim=int(doc.get("dimension", 1)))
        if kind == "levy":
            return LevyKernel(
                levy_atoms=tuple((a["jump"], float(a["weight"])) for a in doc.get("atoms", [])),
                density=doc.get("density"),
                support=tuple(tuple(iv) for iv in doc.get("support", [])),
                drift=doc.get("drift"), dim=int(doc.get("dimension", 1)))
        if kind == "density":
            return DensityKernel(density=doc["density"],
                                 support=tuple(tuple(iv) for iv in doc["support"]))
        if kind == "tilted":
            base = kernel_from_config(doc["base"])
            from .entropy import TiltFunction
            tilt = TiltFunction.from_expression(doc["tilt"], dim=base.dim)
            return TiltedKernel(base=base, tilt=tilt.evaluate,
                                tilt_expression=doc["tilt"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad kernel config: {exc}") from exc
    raise ConfigError(f"unknown kernel kind {kind!r}")


# -- initial law and spec -----------------------------------------------------

def law_to_config(law: InitialLaw) -> dict:
    if law.kind == "point":
        return {"kind": "point", "state": law.state.tolist()}
    if law.kind == "vector":
        return {"kind": "vector", "probabilities": law.probabilities.tolist()}
    raise SerializationError("sampler-based initial laws are not serializable")


def law_from_config(doc: dict) -> InitialLaw:
    kind = doc.get("kind")
    if kind == "point":
        return InitialLaw.point(doc["state"])
    if kind == "vector":
        return InitialLaw.vector(doc["probabilities"])
    raise ConfigError(f"unknown initial law kind {kind!r}")


def spec_to_config(spec: ProcessSpec) -> dict:
    return {"space": space_to_config(spec.space),
            "drift": drift_to_config(spec.drift),
            "kernel": kernel_to_config(spec.kernel),
            "delta": float(spec.delta),
            "initial_law": law_to_config(spec.initial_law),
            "horizon": spec.horizon}


def spec_from_config(doc: dict) -> ProcessSpec:
    try:
        return ProcessSpec(space=space_from_config(doc["space"]),
                           drift=drift_from_config(doc["drift"]),
                           kernel=kernel_from_config(doc["kernel"]),
                           delta=TruncationDelta(float(doc["delta"])),
                           initial_law=law_from_config(doc["initial_law"]),
                           horizon=float(doc["horizon"]))
    except KeyError as exc:
        raise ConfigError(f"config missing mandatory field {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def fingerprint_spec(spec: ProcessSpec) -> str:
    """Stable short hash of the generating spec; "opaque" when the spec
    holds callables that have no expression form."""
    try:
        blob = json.dumps(spec_to_config(spec), sort_keys=True)
    except SerializationError:
        return "opaque"
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_document(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
