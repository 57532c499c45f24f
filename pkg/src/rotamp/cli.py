"""Command-line driver: one JSON experiment config in, flat artifacts out.

Every command reads a config file (--config), applies flag overrides, and
writes its artifacts into --out, or streams them to stdout when no output
directory is given.  Exit codes: 0 success, 2 bad configuration, 3 solver
or domain failure (a diagnostic JSON document replaces the output), 4 too
many replicates failed.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import click
import numpy as np

from . import amp_engine, ensembles, freeprob, spectra, state_evolution
from .errors import ConfigError, NonFiniteIterate, RotampError

# cumulant depth handed to the fixed-point solvers when no schedule fixes it
_FP_ORDER = 64

_CONFIG_KEYS = frozenset((
    "kind", "n", "m", "alpha", "epsilon", "prior", "prior_u", "prior_v",
    "law", "T", "K", "replicates", "seed", "cumulant_source", "out",
))


# ---------------------------------------------------------------------------
# configuration schema


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: model kind, sizes, signal priors, law, schedule.

    Fields a command does not consume may be omitted from the document;
    each command checks for the ones it needs.  Unknown keys are rejected
    outright so a typo cannot silently fall back to a default.  T counts
    u-side iterates: a run with T = 4 produces u_1 (the initialization)
    through u_4, which takes three update rounds.
    """

    kind: str
    law: dict
    n: Optional[int] = None
    m: Optional[int] = None
    alpha: Optional[float] = None
    epsilon: Optional[float] = None
    prior: Optional[dict] = None
    prior_u: Optional[dict] = None
    prior_v: Optional[dict] = None
    T: Optional[int] = None
    K: Optional[int] = None
    replicates: Optional[int] = None
    seed: Optional[int] = None
    cumulant_source: str = "empirical"
    out: Optional[str] = None


def _take_int(doc, key, minimum, maximum=None):
    val = doc.get(key)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError("%s must be an integer" % key)
    if val < minimum:
        raise ConfigError("%s must be at least %d" % (key, minimum))
    if maximum is not None and val > maximum:
        raise ConfigError("%s must be at most %d" % (key, maximum))
    return val


def _take_float(doc, key, at_most=None):
    val = doc.get(key)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError("%s must be a number" % key)
    val = float(val)
    if not val > 0.0:
        raise ConfigError("%s must be positive" % key)
    if at_most is not None and val > at_most:
        raise ConfigError("%s must be at most %s" % (key, at_most))
    return val


def config_from_dict(doc):
    """Validated config from a plain dict; fail-closed on unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError("unknown config keys: %s" % ", ".join(unknown))

    kind = doc.get("kind")
    if kind not in ("symmetric", "rectangular"):
        raise ConfigError("kind must be 'symmetric' or 'rectangular'")

    n = _take_int(doc, "n", 2)
    m = _take_int(doc, "m", 2)

    law = doc.get("law")
    if not isinstance(law, dict):
        raise ConfigError("law must be an object with a 'variant' key")
    if law.get("variant") == "moments":
        if set(law) != {"variant", "path"} or not isinstance(law["path"], str):
            raise ConfigError("a moments law takes exactly 'variant' and 'path'")
    else:
        try:
            law_obj = spectra.law_from_dict(law)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("bad law: %s" % exc) from None
        singular = bool(getattr(law_obj, "singular", False))
        if singular != (kind == "rectangular"):
            raise ConfigError(
                "law variant %r does not fit kind %r" % (law.get("variant"), kind))
        own_gamma = getattr(law_obj, "gamma", None)
        if own_gamma is not None and m is not None and n is not None:
            if abs(own_gamma - m / n) > 1e-12:
                raise ConfigError("law gamma %.17g does not match m/n" % own_gamma)

    priors = {}
    for key in ("prior", "prior_u", "prior_v"):
        val = doc.get(key)
        if val is None:
            continue
        if not isinstance(val, dict):
            raise ConfigError("%s must be an object" % key)
        try:
            ensembles.prior_from_dict(val)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("bad %s: %s" % (key, exc)) from None
        priors[key] = val
    if kind == "symmetric":
        stray = sorted(set(priors) & {"prior_u", "prior_v"})
        if m is not None:
            stray.append("m")
        if stray:
            raise ConfigError(
                "symmetric configs do not take: %s" % ", ".join(stray))
    elif "prior" in priors:
        raise ConfigError("rectangular configs use prior_u and prior_v")

    source = doc.get("cumulant_source", "empirical")
    if source not in ("limit", "empirical"):
        raise ConfigError("cumulant_source must be 'limit' or 'empirical'")
    out = doc.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out must be a path string")

    return ExperimentConfig(
        kind=kind,
        law=law,
        n=n,
        m=m,
        alpha=_take_float(doc, "alpha"),
        epsilon=_take_float(doc, "epsilon", at_most=1.0),
        prior=priors.get("prior"),
        prior_u=priors.get("prior_u"),
        prior_v=priors.get("prior_v"),
        T=_take_int(doc, "T", 1),
        K=_take_int(doc, "K", 1),
        replicates=_take_int(doc, "replicates", 1),
        seed=_take_int(doc, "seed", 0, 2 ** 64 - 1),
        cumulant_source=source,
        out=out,
    )


def config_to_dict(cfg):
    """Plain-dict form; config_from_dict of the result reproduces cfg."""
    return {k: v for k, v in dataclasses.asdict(cfg).items() if v is not None}


def load_config(path, seed=None, out=None):
    """Config from a JSON file, with flag values overriding its fields."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config %s is not valid JSON: %s" % (path, exc)) from None
    cfg = config_from_dict(doc)
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must fit in 64 bits")
        cfg = dataclasses.replace(cfg, seed=seed)
    if out is not None:
        cfg = dataclasses.replace(cfg, out=str(out))
    return cfg


def _need(cfg, *names):
    missing = [name for name in names if getattr(cfg, name) is None]
    if missing:
        raise ConfigError("missing config fields: %s" % ", ".join(missing))


def _law_object(cfg):
    if cfg.law.get("variant") == "moments":
        raise ConfigError("this command needs a spectral law, not a moments file")
    return spectra.law_from_dict(cfg.law)


def _gamma(cfg, law=None):
    if cfg.m is not None and cfg.n is not None:
        return cfg.m / cfg.n
    if law is not None and getattr(law, "gamma", None) is not None:
        return float(law.gamma)
    raise ConfigError("rectangular commands need m and n")


def _priors(cfg):
    if cfg.kind == "symmetric":
        _need(cfg, "prior")
        return (ensembles.prior_from_dict(cfg.prior),)
    _need(cfg, "prior_u", "prior_v")
    return (ensembles.prior_from_dict(cfg.prior_u),
            ensembles.prior_from_dict(cfg.prior_v))


# ---------------------------------------------------------------------------
# artifact formatting


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


def _table_text(header, rows, fmt):
    """CSV (17-significant-digit floats) or a JSON list of row objects."""
    if fmt == "json":
        body = []
        for row in rows:
            entry = {}
            for key, val in zip(header, row):
                if val is not None and isinstance(val, (int, np.integer)):
                    val = int(val)
                elif val is not None:
                    val = float(val)
                entry[key] = val
            body.append(entry)
        return json.dumps(body, indent=2) + "\n"
    lines = [",".join(header)]
    lines.extend(",".join(_cell(val) for val in row) for row in rows)
    return "\n".join(lines) + "\n"


def _json_text(doc):
    return json.dumps(doc, indent=2) + "\n"


def _emit(cfg, artifacts):
    """Write (filename, text) artifacts under cfg.out, or stream to stdout."""
    if cfg.out is None:
        for _, text in artifacts:
            click.echo(text, nl=False)
        return
    target = Path(cfg.out)
    target.mkdir(parents=True, exist_ok=True)
    for name, text in artifacts:
        with (target / name).open("w", newline="\n") as handle:
            handle.write(text)


# ---------------------------------------------------------------------------
# command bodies


def _cumulants_from_file(cfg):
    """(header, rows) for moments supplied as a whitespace-separated file."""
    path = Path(cfg.law["path"])
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("cannot read moments file %s: %s" % (path, exc)) from None
    tokens = [tok for line in text.splitlines()
              if not line.lstrip().startswith("#")
              for tok in line.replace(",", " ").split()]
    try:
        moments = [float(tok) for tok in tokens]
    except ValueError:
        raise ConfigError("moments file %s has non-numeric entries" % path) from None
    if not moments:
        raise ConfigError("moments file %s is empty" % path)
    if cfg.kind == "symmetric":
        if cfg.K is not None:
            moments = moments[:cfg.K]
        kap = freeprob.free_cumulants_from_moments(moments)
        rows = [(k, mo, float(ka))
                for k, (mo, ka) in enumerate(zip(moments, kap), start=1)]
    else:
        if cfg.K is not None:
            if cfg.K % 2:
                raise ConfigError("K must be even for rectangular spectra")
            moments = moments[:cfg.K // 2]
        kap = freeprob.rect_cumulants_from_moments(moments, _gamma(cfg))
        rows = [(2 * i, mo, float(ka))
                for i, (mo, ka) in enumerate(zip(moments, kap), start=1)]
    return ("k", "moment", "cumulant"), rows


def _do_cumulants(cfg, threads, fmt):
    if cfg.law.get("variant") == "moments":
        header, rows = _cumulants_from_file(cfg)
    else:
        _need(cfg, "K")
        law = _law_object(cfg)
        if cfg.kind == "symmetric":
            moments = np.asarray(spectra.law_moments(law, cfg.K), dtype=float)
            kap = spectra.limit_cumulants(law, cfg.K)
            orders = range(1, cfg.K + 1)
        else:
            if cfg.K % 2:
                raise ConfigError("K must be even for rectangular spectra")
            gamma = _gamma(cfg, law)
            half = cfg.K // 2
            moments = np.asarray(spectra.law_moments(law, half), dtype=float)
            if gamma > 1.0:
                # report row-side moments, matching the cumulant convention
                moments = moments / gamma
            kap = spectra.limit_cumulants(law, half, gamma=gamma)
            orders = range(2, cfg.K + 1, 2)
        header = ("k", "moment", "cumulant")
        rows = [(k, float(mo), float(ka))
                for k, mo, ka in zip(orders, moments, kap)]
    ext = "json" if fmt == "json" else "csv"
    _emit(cfg, [("cumulants.%s" % ext, _table_text(header, rows, fmt))])


def _se_inputs(cfg):
    """Law, limit cumulants through order 2T, trajectory, and priors."""
    _need(cfg, "alpha", "epsilon", "T")
    law = _law_object(cfg)
    if cfg.kind == "symmetric":
        priors = _priors(cfg)
        kap = spectra.limit_cumulants(law, 2 * cfg.T)
        traj = state_evolution.se_pca_symmetric(
            priors[0], kap, cfg.alpha, cfg.epsilon, cfg.T)
    else:
        priors = _priors(cfg)
        gamma = _gamma(cfg, law)
        kap = spectra.limit_cumulants(law, 2 * cfg.T, gamma=gamma)
        traj = state_evolution.se_pca_rect(
            priors[0], priors[1], kap, gamma, cfg.alpha, cfg.epsilon, cfg.T)
    return law, kap, traj, priors


def _solve_fixed_point(cfg, law, kap, priors):
    # probe the baseline first so a below-transition alpha surfaces as its
    # own diagnostic instead of a generic solver failure
    if cfg.kind == "symmetric":
        state_evolution.pca_baseline_symmetric(law, cfg.alpha)
        return state_evolution.fixed_point_symmetric(
            priors[0], kap, cfg.alpha, law=law)
    gamma = _gamma(cfg, law)
    state_evolution.pca_baseline_rect(law, gamma, cfg.alpha)
    return state_evolution.fixed_point_rect(
        priors[0], priors[1], kap, gamma, cfg.alpha, law=law)


def _do_se(cfg, threads, fmt):
    law, kap, traj, priors = _se_inputs(cfg)
    fp = _solve_fixed_point(cfg, law, kap, priors)
    header, rows = traj.csv_rows()
    ext = "json" if fmt == "json" else "csv"
    fp_doc = {"alpha": cfg.alpha, "epsilon": cfg.epsilon, **fp.to_json_dict()}
    _emit(cfg, [
        ("se.%s" % ext, _table_text(header, rows, fmt)),
        ("fixed_point.json", _json_text(fp_doc)),
    ])


def _do_fixed_point(cfg, threads, fmt):
    _need(cfg, "alpha")
    law = _law_object(cfg)
    priors = _priors(cfg)
    if cfg.kind == "symmetric":
        kap = spectra.limit_cumulants(law, _FP_ORDER)
    else:
        kap = spectra.limit_cumulants(law, _FP_ORDER, gamma=_gamma(cfg, law))
    fp = _solve_fixed_point(cfg, law, kap, priors)
    doc = {"alpha": cfg.alpha, **fp.to_json_dict()}
    _emit(cfg, [("fixed_point.json", _json_text(doc))])


def _do_baseline(cfg, threads, fmt):
    _need(cfg, "alpha")
    law = _law_object(cfg)
    if cfg.kind == "symmetric":
        doc = {
            "kind": cfg.kind,
            "alpha": cfg.alpha,
            "delta_pca": state_evolution.pca_baseline_symmetric(law, cfg.alpha),
        }
    else:
        gamma = _gamma(cfg, law)
        side_u, side_v = state_evolution.pca_baseline_rect(law, gamma, cfg.alpha)
        doc = {
            "kind": cfg.kind,
            "alpha": cfg.alpha,
            "gamma": gamma,
            "delta_pca": side_u,
            "gamma_pca": side_v,
        }
    _emit(cfg, [("baseline.json", _json_text(doc))])


# ---------------------------------------------------------------------------
# Monte-Carlo replicates


def _replicate_seed(seed, index):
    # derived from (seed, replicate index) alone: schedule-independent
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return int(seq.generate_state(1, np.uint64)[0])


def _run_replicates(cfg, threads):
    """SE trajectory plus per-replicate overlap arrays.

    Returns (traj, results, failures): results maps a completed replicate
    index to (overlap_u, overlap_v or None), failures maps a failed index
    to its diagnostic message.  Replicate i is a pure function of
    (cfg.seed, i), so the thread count cannot change any value.
    """
    _need(cfg, "n", "replicates", "seed")
    if cfg.kind == "rectangular":
        _need(cfg, "m")
    law, kap, traj, priors = _se_inputs(cfg)
    t_amp = cfg.T - 1
    den_u = state_evolution.trajectory_denoisers(traj, priors[0], side="u")[:t_amp]
    den_v = None
    if cfg.kind == "rectangular":
        den_v = state_evolution.trajectory_denoisers(traj, priors[1], side="v")[:t_amp]
    source = "empirical" if cfg.cumulant_source == "empirical" else kap

    def job(index):
        rep_seed = _replicate_seed(cfg.seed, index)
        if cfg.kind == "symmetric":
            inst = ensembles.build_symmetric_instance(
                law, cfg.n, cfg.alpha, priors[0], cfg.epsilon, rep_seed)
            if t_amp == 0:
                return np.array([inst.u1 @ inst.u_star / cfg.n]), None
            run = amp_engine.run_symmetric_amp(
                inst, inst.u1, den_u, t_amp, cumulant_source=source)
            return run.overlap_u, None
        inst = ensembles.build_rect_instance(
            law, cfg.m, cfg.n, cfg.alpha, priors[0], priors[1],
            cfg.epsilon, rep_seed)
        if t_amp == 0:
            return np.array([inst.u1 @ inst.u_star / cfg.m]), np.empty(0)
        run = amp_engine.run_rect_amp(
            inst, inst.u1, den_v, den_u, t_amp, cumulant_source=source)
        return run.overlap_u, run.overlap_v

    results, failures = {}, {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(job, i): i for i in range(cfg.replicates)}
            for fut, index in futures.items():
                try:
                    results[index] = fut.result()
                except NonFiniteIterate as exc:
                    failures[index] = str(exc)
    else:
        for index in range(cfg.replicates):
            try:
                results[index] = job(index)
            except NonFiniteIterate as exc:
                failures[index] = str(exc)
    return traj, results, failures


def _overlap_stats(results, ok, which, length):
    """Per-t mean and sample standard deviation across completed replicates."""
    if not ok:
        return [None] * length, [None] * length
    stack = np.array([np.asarray(results[i][which])[:length] for i in ok])
    means = [float(v) for v in stack.mean(axis=0)]
    if len(ok) < 2:
        sds = [None] * length
    else:
        sds = [float(v) for v in stack.std(axis=0, ddof=1)]
    return means, sds


def _failure_exit(cfg, ok_count):
    # exit 0 iff at least nine in ten replicates completed
    return 0 if ok_count >= 0.9 * cfg.replicates else 4


def _do_simulate(cfg, threads, fmt):
    traj, results, failures = _run_replicates(cfg, threads)
    ok = sorted(results)
    rows = []
    if cfg.kind == "symmetric":
        header = ("replicate", "t", "overlap_u")
        for i in ok:
            ou, _ = results[i]
            rows.extend((i, t, float(ou[t - 1])) for t in range(1, cfg.T + 1))
    else:
        # the final phase stops at u_T, so the t = T row has no v entry
        header = ("replicate", "t", "overlap_u", "overlap_v")
        for i in ok:
            ou, ov = results[i]
            rows.extend(
                (i, t, float(ou[t - 1]),
                 float(ov[t - 1]) if t < cfg.T else None)
                for t in range(1, cfg.T + 1))
    mean_u, sd_u = _overlap_stats(results, ok, 0, cfg.T)
    summary = {
        "kind": cfg.kind,
        "alpha": cfg.alpha,
        "epsilon": cfg.epsilon,
        "T": cfg.T,
        "replicates": cfg.replicates,
        "completed": len(ok),
        "failed_replicates": sorted(failures),
        "cumulant_source": cfg.cumulant_source,
        "mean_overlap_u": mean_u,
        "sd_overlap_u": sd_u,
    }
    if cfg.kind == "rectangular":
        summary["gamma"] = _gamma(cfg)
        mean_v, sd_v = _overlap_stats(results, ok, 1, cfg.T - 1)
        summary["mean_overlap_v"] = mean_v
        summary["sd_overlap_v"] = sd_v
    ext = "json" if fmt == "json" else "csv"
    _emit(cfg, [
        ("replicates.%s" % ext, _table_text(header, rows, fmt)),
        ("summary.json", _json_text(summary)),
    ])
    return _failure_exit(cfg, len(ok))


def _do_compare(cfg, threads, fmt):
    traj, results, failures = _run_replicates(cfg, threads)
    ok = sorted(results)
    mean_u, sd_u = _overlap_stats(results, ok, 0, cfg.T)
    rows = []
    if cfg.kind == "symmetric":
        header = ("t", "se_prediction", "empirical_mean", "empirical_sd",
                  "abs_gap")
        for t in range(1, cfg.T + 1):
            se_val = float(traj.overlap_u[t - 1])
            emp = mean_u[t - 1]
            gap = None if emp is None else abs(se_val - emp)
            rows.append((t, se_val, emp, sd_u[t - 1], gap))
    else:
        header = ("t", "se_prediction", "empirical_mean", "empirical_sd",
                  "abs_gap", "se_prediction_v", "empirical_mean_v",
                  "empirical_sd_v", "abs_gap_v")
        mean_v, sd_v = _overlap_stats(results, ok, 1, cfg.T - 1)
        for t in range(1, cfg.T + 1):
            se_val = float(traj.overlap_u[t - 1])
            emp = mean_u[t - 1]
            gap = None if emp is None else abs(se_val - emp)
            se_v = float(traj.overlap_v[t - 1])
            if t < cfg.T:
                emp_v = mean_v[t - 1]
                gap_v = None if emp_v is None else abs(se_v - emp_v)
                tail = (se_v, emp_v, sd_v[t - 1], gap_v)
            else:
                tail = (se_v, None, None, None)
            rows.append((t, se_val, emp, sd_u[t - 1], gap) + tail)
    ext = "json" if fmt == "json" else "csv"
    _emit(cfg, [("compare.%s" % ext, _table_text(header, rows, fmt))])
    return _failure_exit(cfg, len(ok))


# ---------------------------------------------------------------------------
# click wiring


def _common_options(fn):
    for option in (
        click.option("--format", "fmt", type=click.Choice(("csv", "json")),
                     default="csv", show_default=True,
                     help="Tabular artifact format."),
        click.option("--threads", type=int, default=1, show_default=True,
                     help="Worker threads for replicate runs."),
        click.option("--out", "out_dir", type=click.Path(file_okay=False),
                     default=None,
                     help="Artifact directory (default: stdout)."),
        click.option("--seed", type=int, default=None,
                     help="Override the config seed."),
        click.option("--config", "config_path", required=True,
                     type=click.Path(dir_okay=False),
                     help="JSON experiment config."),
    ):
        fn = option(fn)
    return fn


def _invoke(body, config_path, seed, out_dir, threads, fmt):
    if threads < 1:
        click.echo("config error: threads must be at least 1", err=True)
        sys.exit(2)
    try:
        cfg = load_config(config_path, seed=seed, out=out_dir)
        code = body(cfg, threads, fmt)
    except ConfigError as exc:
        click.echo("config error: %s" % exc, err=True)
        sys.exit(2)
    except RotampError as exc:
        doc = {"error": type(exc).__name__, "message": str(exc)}
        click.echo(_json_text(doc), nl=False)
        sys.exit(3)
    sys.exit(code or 0)


@click.group()
def main():
    """Spiked-model pipelines: cumulants, predictions, simulations."""


@main.command("cumulants")
@_common_options
def cumulants_command(config_path, seed, out_dir, threads, fmt):
    """Moment and free-cumulant table for the configured spectrum."""
    _invoke(_do_cumulants, config_path, seed, out_dir, threads, fmt)


@main.command("se")
@_common_options
def se_command(config_path, seed, out_dir, threads, fmt):
    """State-evolution trajectory table plus its long-run fixed point."""
    _invoke(_do_se, config_path, seed, out_dir, threads, fmt)


@main.command("fixed-point")
@_common_options
def fixed_point_command(config_path, seed, out_dir, threads, fmt):
    """Long-iteration fixed point of the configured model."""
    _invoke(_do_fixed_point, config_path, seed, out_dir, threads, fmt)


@main.command("baseline")
@_common_options
def baseline_command(config_path, seed, out_dir, threads, fmt):
    """Spectral estimator overlap for the configured model."""
    _invoke(_do_baseline, config_path, seed, out_dir, threads, fmt)


@main.command("simulate")
@_common_options
def simulate_command(config_path, seed, out_dir, threads, fmt):
    """Monte-Carlo replicates: per-replicate overlaps and a summary."""
    _invoke(_do_simulate, config_path, seed, out_dir, threads, fmt)


@main.command("compare")
@_common_options
def compare_command(config_path, seed, out_dir, threads, fmt):
    """Merged table of state-evolution predictions and empirical overlaps."""
    _invoke(_do_compare, config_path, seed, out_dir, threads, fmt)


if __name__ == "__main__":
    main()
