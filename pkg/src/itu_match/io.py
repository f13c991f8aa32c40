"""Market files (JSON), household datasets (CSV), reports and synthetic data.

Both file formats carry ``schema_version``. Floats are written with
``repr`` so every value round-trips exactly. The synthetic generator uses
numpy's PCG64 bit generator, so a seed fixes every draw on every platform.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .equilibrium import Equilibrium, Market, ipfp_solve, pair_problems
from .estimation import Dataset, HouseholdRecord
from .model import T_DEFAULT, Preferences, PublicGoodPreferences, TransferableUtility, TypeSpec, solve_single

SCHEMA_VERSION = 1
FAMILIES = ("home_production", "tu", "public_good")

_TYPE_SCHEMA = {
    "type": "object",
    "required": ["id"],
    "additionalProperties": False,
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "mass": {"type": "number", "exclusiveMinimum": 0},
        "wage": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "education": {"type": "integer", "minimum": 0},
        "age": {"type": ["number", "null"]},
    },
}

_NUM_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_LOADINGS = {"type": "object", "additionalProperties": {"type": "number"}}

MARKET_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "family", "preferences", "men", "women"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "family": {"enum": list(FAMILIES)},
        "preferences": {"type": "object"},
        "men": {"type": "array", "items": _TYPE_SCHEMA, "minItems": 1},
        "women": {"type": "array", "items": _TYPE_SCHEMA, "minItems": 1},
        "options": {
            "type": "object",
            "properties": {"T": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}

_PREF_SCHEMAS = {
    "home_production": {
        "type": "object",
        "required": ["a", "alpha", "A", "b", "beta", "B", "eta"],
        "additionalProperties": False,
        "properties": {
            **{k: _NUM_LIST for k in ("a", "alpha", "A", "b", "beta", "B")},
            "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "zeta": {"type": "number", "exclusiveMinimum": 0},
            "zeta_single": {"type": "number", "exclusiveMinimum": 0},
            "delta_a": _LOADINGS,
            "delta_b": _LOADINGS,
        },
    },
    "tu": {
        "type": "object",
        "required": ["phi"],
        "additionalProperties": False,
        "properties": {"phi": {"type": "array", "items": _NUM_LIST, "minItems": 1}},
    },
    "public_good": {
        "type": "object",
        "required": ["A", "B", "phi"],
        "additionalProperties": False,
        "properties": {
            "A": {"type": "number", "exclusiveMinimum": 0},
            "B": {"type": "number", "exclusiveMinimum": 0},
            "phi": {"type": "number", "exclusiveMinimum": 0},
            "delta_a": {"type": "number"},
            "delta_b": {"type": "number"},
        },
    },
}


class MarketFileError(ValueError):
    """Invalid market file; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid market file:\n  " + "\n  ".join(self.errors))


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def validate_market_document(doc) -> list[str]:
    """All schema and consistency violations of a parsed market document."""
    v = jsonschema.Draft202012Validator(MARKET_SCHEMA)
    errors = [f"{_path(e)}: {e.message}" for e in sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))]
    if not isinstance(doc, dict):
        return errors
    fam = doc.get("family")
    prefs = doc.get("preferences")
    if fam in _PREF_SCHEMAS and isinstance(prefs, dict):
        pv = jsonschema.Draft202012Validator(_PREF_SCHEMAS[fam])
        errors += [f"preferences/{_path(e)}: {e.message}" for e in pv.iter_errors(prefs)]
    for side in ("men", "women"):
        types = doc.get(side)
        if not isinstance(types, list):
            continue
        seen = set()
        for t in types:
            if not isinstance(t, dict) or not isinstance(t.get("id"), str):
                continue
            if t["id"] in seen:
                errors.append(f"{side}: duplicate type id {t['id']!r}")
            seen.add(t["id"])
            if fam == "home_production":
                if t.get("wage") is None:
                    errors.append(f"{side}/{t['id']}: wage is required for the home-production family")
                if isinstance(prefs, dict) and isinstance(prefs.get("a"), list):
                    k = len(prefs["a"])
                    if isinstance(t.get("education", 0), int) and t.get("education", 0) >= k:
                        errors.append(f"{side}/{t['id']}: education class {t['education']} not defined "
                                      f"(preferences have {k})")
    if fam == "tu" and isinstance(prefs, dict) and isinstance(prefs.get("phi"), list):
        shape = (len(doc.get("men") or []), len(doc.get("women") or []))
        phi = prefs["phi"]
        if not (len(phi) == 1 and len(phi[0]) == 1) and \
                (len(phi) != shape[0] or any(not isinstance(r, list) or len(r) != shape[1] for r in phi)):
            errors.append(f"preferences/phi: expected a {shape[0]}x{shape[1]} matrix or a 1x1 matrix")
    if not errors and fam == "home_production":
        try:
            _prefs_from(fam, prefs)
        except ValueError as exc:
            errors.append(f"preferences: {exc}")
    return errors


def _prefs_from(family, d):
    if family == "home_production":
        return Preferences.from_dict(d)
    if family == "tu":
        return TransferableUtility(d["phi"])
    return PublicGoodPreferences(**d)


def _prefs_to(prefs):
    if isinstance(prefs, Preferences):
        return "home_production", prefs.to_dict()
    if isinstance(prefs, TransferableUtility):
        return "tu", {"phi": [list(r) for r in prefs.phi]}
    if isinstance(prefs, PublicGoodPreferences):
        return "public_good", {"A": prefs.A, "B": prefs.B, "phi": prefs.phi,
                               "delta_a": prefs.delta_a, "delta_b": prefs.delta_b}
    raise TypeError(f"cannot serialise {type(prefs).__name__}")


def market_from_document(doc) -> Market:
    errors = validate_market_document(doc)
    if errors:
        raise MarketFileError(errors)
    opts = dict(doc.get("options", {}))
    T = float(opts.pop("T", T_DEFAULT))
    return Market(
        men=[TypeSpec(**t) for t in doc["men"]], women=[TypeSpec(**t) for t in doc["women"]], T=T,
        family=doc["family"], prefs=_prefs_from(doc["family"], doc["preferences"]), options=opts,
    )


def load_market(path) -> Market:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MarketFileError([f"line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from None
    return market_from_document(doc)


def market_document(market: Market, prefs=None) -> dict:
    prefs = market.prefs if prefs is None else prefs
    family, pdoc = _prefs_to(prefs)

    def typ(t: TypeSpec):
        d = {"id": t.id, "mass": float(t.mass), "wage": None if t.wage is None else float(t.wage),
             "education": int(t.education), "age": None if t.age is None else float(t.age)}
        return d

    return {
        "schema_version": SCHEMA_VERSION, "family": family, "preferences": pdoc,
        "men": [typ(t) for t in market.men], "women": [typ(t) for t in market.women],
        "options": {"T": float(market.T), **market.options},
    }


def save_market(market: Market, path, prefs=None) -> None:
    Path(path).write_text(json.dumps(market_document(market, prefs), indent=2) + "\n")


# ---------------------------------------------------------------------------
# datasets


DATASET_COLUMNS = (
    "kind", "man_type", "woman_type", "wage_man", "wage_woman", "work_man", "work_woman",
    "housework_man", "housework_woman", "education_man", "education_woman", "age_man", "age_woman",
)
_INT_COLUMNS = ("education_man", "education_woman")
_STR_COLUMNS = ("kind", "man_type", "woman_type")
_HEADER_PREFIX = "# itu_match dataset schema_version="


class DatasetFileError(ValueError):
    pass


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return repr(v)
    return str(v)


def save_dataset(data: Dataset, path, T: float | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{_HEADER_PREFIX}{SCHEMA_VERSION} T={data.T!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for r in data.records:
            w.writerow([_fmt(getattr(r, c)) for c in DATASET_COLUMNS])


def load_dataset(path) -> Dataset:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(_HEADER_PREFIX):
            raise DatasetFileError("line 1: missing dataset schema header")
        meta = dict(tok.split("=", 1) for tok in first[len("# itu_match dataset "):].split())
        if meta.get("schema_version") != str(SCHEMA_VERSION):
            raise DatasetFileError(f"line 1: unsupported schema_version {meta.get('schema_version')!r}")
        T = float(meta.get("T", T_DEFAULT))
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DATASET_COLUMNS:
            raise DatasetFileError(f"line 2: expected columns {','.join(DATASET_COLUMNS)}")
        records = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(DATASET_COLUMNS):
                raise DatasetFileError(f"line {lineno}: expected {len(DATASET_COLUMNS)} fields, got {len(row)}")
            kw = {}
            for col, val in zip(DATASET_COLUMNS, row):
                if val == "":
                    kw[col] = None
                    continue
                try:
                    kw[col] = val if col in _STR_COLUMNS else int(val) if col in _INT_COLUMNS else float(val)
                except ValueError:
                    raise DatasetFileError(f"line {lineno}, field {col}: cannot parse {val!r}") from None
            try:
                records.append(HouseholdRecord(**kw))
            except ValueError as exc:
                raise DatasetFileError(f"line {lineno}: {exc}") from None
    try:
        return Dataset(records, T)
    except ValueError as exc:
        raise DatasetFileError(str(exc)) from None


# ---------------------------------------------------------------------------
# reports


def save_report(report, path) -> tuple[Path, Path]:
    """Write ``report.rows()`` to ``<path>.csv`` and ``report.summary()`` to ``<path>.json``.

    Column order is the key order of the first row; every row has the same
    columns.
    """
    base = Path(path)
    if base.suffix in (".csv", ".json"):
        base = base.with_suffix("")
    rows = list(report.rows())
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    cols = list(rows[0]) if rows else []
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            if list(r) != cols:
                raise ValueError("report rows have inconsistent columns")
            w.writerow([_fmt(r[c]) for c in cols])
    json_path.write_text(json.dumps(report.summary(), indent=2, sort_keys=False, default=_json_default) + "\n")
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# synthetic markets


@dataclass(frozen=True)
class WageDistribution:
    """Log-normal hourly wages."""

    mean_log: float
    sd_log: float = 0.35

    def draw(self, rng, n):
        return np.exp(rng.normal(self.mean_log, self.sd_log, size=n))


@dataclass
class SyntheticOptions:
    n_households: int = 1000
    sigma: tuple = (3.0, 3.0, 2.0, 2.0)
    education_share: float = 0.4
    age_range: tuple = (25, 60)
    men_wages: WageDistribution = field(default_factory=lambda: WageDistribution(math.log(20.0)))
    women_wages: WageDistribution = field(default_factory=lambda: WageDistribution(math.log(15.0)))
    max_attempts: int = 5


def _draw_types(rng, n, prefix, wages: WageDistribution, opts: SyntheticOptions, n_classes: int):
    w = wages.draw(rng, n)
    edu = (rng.random(n) < opts.education_share).astype(int) if n_classes > 1 else np.zeros(n, int)
    age = rng.integers(opts.age_range[0], opts.age_range[1] + 1, size=n)
    return [TypeSpec(f"{prefix}{i}", 1.0, float(w[i]), int(edu[i]), float(age[i])) for i in range(n)]


def _noisy(rng, l, h, s_l, s_h, T):
    lo = l + s_l * rng.standard_normal()
    ho = h + s_h * rng.standard_normal()
    ho = min(max(ho, 0.0), T)
    lo = min(max(lo, 0.0), T - ho)
    return max(T - lo - ho, 0.0), ho


def sample_households(prefs, market: Market, eq: Equilibrium, rng, n_households: int,
                      sigma=(0.0, 0.0, 0.0, 0.0)) -> Dataset:
    """Draw households from equilibrium frequencies and add hour noise."""
    X, Y = market.shape
    T = market.T
    probs = np.concatenate([eq.mu.ravel(), eq.mu_x0, eq.mu_0y])
    probs = probs / probs.sum()
    counts = rng.multinomial(n_households, probs)
    problems = pair_problems(prefs, market) if isinstance(prefs, Preferences) else None
    s1, s2, s3, s4 = sigma
    records = []
    for cell in np.flatnonzero(counts):
        c = int(counts[cell])
        if cell < X * Y:
            x, y = divmod(int(cell), Y)
            mt, wt = market.men[x], market.women[y]
            base = dict(kind="couple", man_type=mt.id, woman_type=wt.id, wage_man=mt.wage, wage_woman=wt.wage,
                        education_man=mt.education, education_woman=wt.education, age_man=mt.age,
                        age_woman=wt.age)
            hrs = problems[x][y].hours(eq.results[x][y].y) if problems else None
            for _ in range(c):
                if hrs is None:
                    records.append(HouseholdRecord(**base))
                    continue
                wa, ha = _noisy(rng, hrs[0], hrs[2], s1, s3, T)
                wb, hb = _noisy(rng, hrs[1], hrs[3], s2, s4, T)
                records.append(HouseholdRecord(**base, work_man=wa, housework_man=ha,
                                               work_woman=wb, housework_woman=hb))
        elif cell < X * Y + X:
            t = market.men[int(cell) - X * Y]
            base = dict(kind="single_m", man_type=t.id, wage_man=t.wage, education_man=t.education, age_man=t.age)
            for _ in range(c):
                if problems is None:
                    records.append(HouseholdRecord(**base))
                    continue
                s = solve_single(prefs, t.wage, t.education, T)
                wa, ha = _noisy(rng, s.l, s.h, s1, s3, T)
                records.append(HouseholdRecord(**base, work_man=wa, housework_man=ha))
        else:
            t = market.women[int(cell) - X * Y - X]
            base = dict(kind="single_f", woman_type=t.id, wage_woman=t.wage, education_woman=t.education,
                        age_woman=t.age)
            for _ in range(c):
                if problems is None:
                    records.append(HouseholdRecord(**base))
                    continue
                s = solve_single(prefs, t.wage, t.education, T, woman=True)
                wb, hb = _noisy(rng, s.l, s.h, s2, s4, T)
                records.append(HouseholdRecord(**base, work_woman=wb, housework_woman=hb))
    return Dataset(records, T)


def generate_synthetic(prefs, sizes=(5, 5), seed: int = 0, options: SyntheticOptions | None = None,
                       T: float = T_DEFAULT, return_equilibrium: bool = False):
    """Synthetic market and household sample, deterministic given ``seed``.

    Types get log-normal wages, an education class and an age; the market is
    solved, households are drawn from the equilibrium frequencies and hours
    receive Gaussian noise with scales ``options.sigma``, clipped to the time
    endowment. If the equilibrium fails, types are redrawn (up to
    ``options.max_attempts`` times); ``market.options["attempts"]`` records it.
    """
    opts = options or SyntheticOptions()
    X, Y = sizes
    if X < 1 or Y < 1:
        raise ValueError("sizes must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    k = prefs.n_classes if isinstance(prefs, Preferences) else 1
    last_exc = None
    for attempt in range(1, opts.max_attempts + 1):
        men = _draw_types(rng, X, "m", opts.men_wages, opts, k)
        women = _draw_types(rng, Y, "f", opts.women_wages, opts, k)
        market = Market(men, women, T, family=_prefs_to(prefs)[0], prefs=prefs,
                        options={"seed": seed, "attempts": attempt})
        try:
            eq = ipfp_solve(prefs, market)
        except Exception as exc:  # noqa: BLE001 - redraw on any solver failure
            last_exc = exc
            continue
        if not eq.converged:
            last_exc = RuntimeError(f"equilibrium {eq.status}")
            continue
        data = sample_households(prefs, market, eq, rng, opts.n_households, opts.sigma)
        return (market, data, eq) if return_equilibrium else (market, data)
    raise RuntimeError(f"no equilibrium after {opts.max_attempts} draws: {last_exc}")
