"""INI scenario configuration and the boundary-value expression grammar.

Layout::

    [scenario]      name, dt, T, family, mode, navier_stokes, mesh_motion,
                    pressure_element, initial_pressure, inlet_marker,
                    outlet_marker
    [mesh]          file = path   or   x_range, y_fluid, y_porous, nx, ny,
                    side.<side> = marker, split.<marker> = new_marker if <expr>
    [materials]     lam, mu_s, mu_f, alpha, gamma, c0, rho_f, rho_s, g, kappa
    [bc.<marker>]   kind = velocity | displacement | pressure | traction
                           | normal_stress | flux | nitsche
                    value = expression (comma separated for vectors)
                    components = normal | x | y | all, penalty = number
                    ([bc.<marker>.<label>] adds a further condition on the
                    same marker, e.g. a pressure and a normal displacement)
    [permeability]  kind, seed, target_mean, and kind parameters
    [elasticity]    path, column, young, exponent, poisson: per-cell Lame
                    parameters from a porosity column,
                    E = young * (1 - 2 porosity)**exponent
    [output]        dir, every, vtk

Expressions use numbers, ``+ - * / **``, parentheses, the variables
``x``, ``y``, ``t`` and ``pi``, and the functions ``sin`` and ``cos``.
"""

from __future__ import annotations

import ast
import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


_FUNCTIONS = {"sin": np.sin, "cos": np.cos}
_VARIABLES = ("x", "y", "t")
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide, ast.Pow: np.power}
_UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}


class Expression:
    """A compiled scalar expression over ``x``, ``y`` and ``t``."""

    def __init__(self, text: str):
        self.text = text.strip()
        try:
            tree = ast.parse(self.text, mode="eval")
        except SyntaxError as exc:
            raise ConfigError(f"cannot parse expression {text!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ConfigError(f"operator not allowed in {self.text!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if type(node.op) not in _UNARY:
                raise ConfigError(f"operator not allowed in {self.text!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ConfigError(f"only numeric constants are allowed in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id not in _VARIABLES and node.id != "pi":
                raise ConfigError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
                raise ConfigError(f"only sin and cos may be called in {self.text!r}")
            if len(node.args) != 1 or node.keywords:
                raise ConfigError(f"functions take exactly one argument in {self.text!r}")
            self._check(node.args[0])
        else:
            raise ConfigError(f"unsupported syntax {type(node).__name__} in {self.text!r}")

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](self._eval(node.left, env), self._eval(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](self._eval(node.operand, env))
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return math.pi if node.id == "pi" else env[node.id]
        return _FUNCTIONS[node.func.id](self._eval(node.args[0], env))

    def __call__(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(all="ignore"):
            val = self._eval(self._tree, {"x": x, "y": y, "t": float(t)})
        return np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(x, y).shape).copy()

    @property
    def is_constant_zero(self) -> bool:
        return isinstance(self._tree, ast.Constant) and float(self._tree.value) == 0.0

    def __repr__(self):
        return f"Expression({self.text!r})"


class VectorExpression:
    """Two expressions evaluated as a (2, n) array."""

    def __init__(self, parts):
        if len(parts) != 2:
            raise ConfigError(f"vector value needs two components, got {len(parts)}")
        self.parts = [p if isinstance(p, Expression) else Expression(p) for p in parts]

    def __call__(self, x, y, t=0.0):
        return np.stack([p(x, y, t) for p in self.parts])

    def __repr__(self):
        return f"VectorExpression({[p.text for p in self.parts]!r})"


def parse_value(text: str) -> Expression | VectorExpression:
    parts = _split_list(text)
    if len(parts) == 1:
        return Expression(parts[0])
    return VectorExpression(parts)


def _split_list(text: str) -> list:
    """Split on top-level commas (commas inside parentheses are kept)."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur).strip())
    if any(not s for s in out):
        raise ConfigError(f"empty list entry in {text!r}")
    return out


BC_KINDS = ("velocity", "displacement", "pressure", "traction", "normal_stress", "flux", "nitsche")
COMPONENT_MASKS = {"all": None, "x": (True, False), "y": (False, True), "normal": "normal"}


@dataclass
class BoundarySpec:
    marker: str
    kind: str
    value: Expression | VectorExpression
    components: object = None
    penalty: float = 1.0


@dataclass
class ScenarioConfig:
    name: str
    dt: float
    T: float
    family: str = "taylor_hood"
    mode: str = "cartesian"
    navier_stokes: bool = False
    mesh_motion: bool = False
    pressure_element: str | None = None
    initial_pressure: Expression | None = None
    inlet_marker: str | None = None
    outlet_marker: str | None = None
    mesh: dict = field(default_factory=dict)
    materials: dict = field(default_factory=dict)
    boundaries: list = field(default_factory=list)
    permeability: dict | None = None
    elasticity: dict | None = None
    output_dir: str | None = None
    output_every: int = 1
    write_vtk: bool = True
    source: str | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


_FLOAT_MATERIALS = ("lam", "mu_s", "mu_f", "alpha", "gamma", "c0", "rho_f", "rho_s", "kappa")


def _float(section, key, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"[{section.name}] is missing {key!r}")
        return default
    try:
        return float(section[key])
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {section[key]!r} is not a number") from None


def _bool(section, key, default=False):
    if key not in section:
        return default
    try:
        return section.getboolean(key)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must be a boolean") from None


def _pair(section, key):
    parts = _split_list(section[key])
    if len(parts) != 2:
        raise ConfigError(f"[{section.name}] {key} needs two comma-separated numbers")
    try:
        return tuple(float(v) for v in parts)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must contain numbers") from None


def parse_config(text: str, source: str | None = None) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if "scenario" not in cp:
        raise ConfigError("missing [scenario] section")
    sc = cp["scenario"]
    base = Path(source).parent if source else Path(".")
    cfg = ScenarioConfig(
        name=sc.get("name", "run"),
        dt=_float(sc, "dt"),
        T=_float(sc, "T"),
        family=sc.get("family", "taylor_hood"),
        mode=sc.get("mode", "cartesian"),
        navier_stokes=_bool(sc, "navier_stokes"),
        mesh_motion=_bool(sc, "mesh_motion"),
        pressure_element=sc["pressure_element"].upper() if "pressure_element" in sc else None,
        initial_pressure=Expression(sc["initial_pressure"]) if "initial_pressure" in sc else None,
        inlet_marker=sc.get("inlet_marker"),
        outlet_marker=sc.get("outlet_marker"),
        source=source,
    )
    if not cfg.dt > 0:
        raise ConfigError("dt must be positive")
    if not cfg.T >= cfg.dt:
        raise ConfigError("T must be at least dt")
    if not math.isclose(cfg.n_steps * cfg.dt, cfg.T, rel_tol=1e-9):
        raise ConfigError(f"dt = {cfg.dt:g} does not divide T = {cfg.T:g}")
    if cfg.family not in ("taylor_hood", "mini"):
        raise ConfigError(f"unknown element family {cfg.family!r}")
    if cfg.mode not in ("cartesian", "axisym"):
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.pressure_element not in (None, "P1", "P2"):
        raise ConfigError("pressure_element must be p1 or p2")

    if "mesh" not in cp:
        raise ConfigError("missing [mesh] section")
    ms = cp["mesh"]
    if "file" in ms:
        cfg.mesh = {"file": str(base / ms["file"])}
    else:
        try:
            cfg.mesh = {"x_range": _pair(ms, "x_range"), "y_fluid": _pair(ms, "y_fluid"),
                        "y_porous": _pair(ms, "y_porous"), "nx": int(ms["nx"]), "ny": int(ms["ny"])}
        except KeyError as exc:
            raise ConfigError(f"[mesh] is missing {exc.args[0]!r}") from None
        except ConfigError:
            raise
        except ValueError:
            raise ConfigError("[mesh] nx and ny must be integers") from None
    cfg.mesh["sides"] = {k[5:]: v for k, v in ms.items() if k.startswith("side.")}
    splits = []
    for k, v in ms.items():
        if k.startswith("split."):
            if " if " not in v:
                raise ConfigError(f"[mesh] {k} must read '<new marker> if <expression>'")
            new, cond = v.split(" if ", 1)
            splits.append((k[6:], new.strip(), Expression(cond)))
    cfg.mesh["splits"] = splits

    if "materials" in cp:
        mat = cp["materials"]
        for key in mat:
            if key == "g":
                cfg.materials["g"] = _pair(mat, "g")
            elif key in _FLOAT_MATERIALS:
                cfg.materials[key] = _float(mat, key)
            else:
                raise ConfigError(f"unknown material parameter {key!r}")

    for name in cp.sections():
        if not name.startswith("bc."):
            continue
        sec = cp[name]
        marker = name[3:].split(".", 1)[0]
        kind = sec.get("kind")
        if kind not in BC_KINDS:
            raise ConfigError(f"[{name}] kind must be one of {', '.join(BC_KINDS)}")
        if "value" not in sec:
            raise ConfigError(f"[{name}] is missing 'value'")
        comp = sec.get("components", "all")
        if comp not in COMPONENT_MASKS:
            raise ConfigError(f"[{name}] components must be one of {', '.join(COMPONENT_MASKS)}")
        cfg.boundaries.append(BoundarySpec(marker, kind, parse_value(sec["value"]), COMPONENT_MASKS[comp],
                                           _float(sec, "penalty", 1.0)))

    if "permeability" in cp:
        sec = cp["permeability"]
        if "kind" not in sec:
            raise ConfigError("[permeability] is missing 'kind'")
        params = {k: v for k, v in sec.items() if k not in ("kind", "seed", "target_mean")}
        for k, v in list(params.items()):
            if k == "path":
                params[k] = str(base / v)
            else:
                try:
                    params[k] = float(v)
                except ValueError:
                    pass
        cfg.permeability = {
            "kind": sec["kind"],
            "params": params,
            "seed": int(sec["seed"]) if "seed" in sec else None,
            "target_mean": _float(sec, "target_mean") if "target_mean" in sec else None,
        }

    if "elasticity" in cp:
        sec = cp["elasticity"]
        if "path" not in sec:
            raise ConfigError("[elasticity] is missing 'path'")
        cfg.elasticity = {"path": str(base / sec["path"]), "column": sec.get("column", "porosity"),
                          "young": _float(sec, "young"), "exponent": _float(sec, "exponent", 1.0),
                          "poisson": _float(sec, "poisson")}
        if not 0 <= cfg.elasticity["poisson"] < 0.5:
            raise ConfigError("[elasticity] poisson must lie in [0, 0.5)")

    if "output" in cp:
        out = cp["output"]
        if "dir" in out:
            cfg.output_dir = str(base / out["dir"])
        cfg.output_every = int(_float(out, "every", 1.0))
        cfg.write_vtk = _bool(out, "vtk", True)
        if cfg.output_every < 1:
            raise ConfigError("[output] every must be at least 1")
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
