"""Command-line front end.

Subcommands wire CSV/JSON files to the library: ``fit`` adjusts one score
vector, ``truthfulness`` sweeps all rankings of a small instance,
``estimation``/``minimax`` run the error-curve and rate studies, ``icml``
and ``synthetic`` produce the review-data style tables, and
``check-majorization`` compares two vectors.

Conventions: CSV in and out with header rows, UTF-8, '.' decimal, floats at
12 significant digits.  Every file-producing run writes a ``<out>.meta.json``
sidecar with the effective parameters; feeding that sidecar back through
``--config`` replays the run byte for byte.  Flags override config-file
values; a missing seed falls back to the ISOMECH_SEED environment variable,
then to 0.  Exit codes: 0 success, 1 computation failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .errors import InvalidParameterError, IsomechError, ValidationError
from .expfam import Family, ScoreBounds, family_from_dict, family_from_spec
from .isotonic import (
    CoarseRanking,
    Ranking,
    coarse_isotonic_mechanism,
    coarse_to_permutation,
    isotonic_mechanism,
    ranking_constrained_mle,
)
from .mechanism import UtilityFn, rank_all_utilities
from .order import majorizes, majorizes_natural_order, weakly_majorizes
from .experiments import (
    AuthorRecord,
    EstimationConfig,
    ExplicitScores,
    LinearRamp,
    PoolResample,
    ReviewRecord,
    build_lower_bound,
    estimation_error_curve,
    rate_check,
    surrogate_eval,
    synthetic_icml_study,
)

__all__ = ["main"]


def _fmt(value: Any) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def _write_table(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]],
                 fmt: str) -> None:
    if fmt == "json":
        payload = [dict(zip(header, row)) for row in rows]
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_sidecar(out_path: str, command: str, params: dict[str, Any],
                   outputs: Sequence[str]) -> None:
    sidecar = {
        "command": command,
        "params": params,
        "outputs": list(outputs),
        "version": __version__,
    }
    with open(out_path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv(path: str, columns: Sequence[str]) -> list[tuple[int, dict[str, str]]]:
    """Rows of a headered CSV as (line number, column dict); strict schema."""
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path} line 1: missing header row") from None
        header = [h.strip() for h in header]
        if header != list(columns):
            raise ValidationError(
                f"{path} line 1: expected header {','.join(columns)!r}, got {','.join(header)!r}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(columns):
                raise ValidationError(
                    f"{path} line {lineno}: expected {len(columns)} fields, got {len(row)}"
                )
            rows.append((lineno, dict(zip(columns, (cell.strip() for cell in row)))))
        return rows


def _parse_number(path: str, lineno: int, name: str, text: str, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ValidationError(
            f"{path} line {lineno}: {name} must be a number, got {text!r}"
        ) from None


def _read_scores(path: str) -> np.ndarray:
    rows = _read_csv(path, ("index", "score"))
    if not rows:
        raise ValidationError(f"{path}: no score rows")
    n = len(rows)
    scores = np.empty(n)
    seen = set()
    for lineno, row in rows:
        idx = _parse_number(path, lineno, "index", row["index"], int)
        if not 1 <= idx <= n or idx in seen:
            raise ValidationError(
                f"{path} line {lineno}: index {idx} is not a fresh value in 1..{n}"
            )
        seen.add(idx)
        scores[idx - 1] = _parse_number(path, lineno, "score", row["score"])
    return scores


def _read_ranking(path: str, n: int) -> Ranking:
    rows = _read_csv(path, ("rank", "index"))
    if len(rows) != n:
        raise ValidationError(f"{path}: expected {n} ranking rows, found {len(rows)}")
    perm = [0] * n
    seen = set()
    for lineno, row in rows:
        rank = _parse_number(path, lineno, "rank", row["rank"], int)
        idx = _parse_number(path, lineno, "index", row["index"], int)
        if not 1 <= rank <= n or perm[rank - 1]:
            raise ValidationError(f"{path} line {lineno}: rank {rank} invalid or repeated")
        if not 1 <= idx <= n:
            raise ValidationError(
                f"{path} line {lineno}: index {idx} does not name a score row in 1..{n}"
            )
        if idx in seen:
            raise ValidationError(f"{path} line {lineno}: index {idx} ranked twice")
        seen.add(idx)
        perm[rank - 1] = idx
    return Ranking(perm)


def _read_blocks(path: str, n: int) -> CoarseRanking:
    rows = _read_csv(path, ("block", "index"))
    blocks: dict[int, list[int]] = {}
    for lineno, row in rows:
        block = _parse_number(path, lineno, "block", row["block"], int)
        idx = _parse_number(path, lineno, "index", row["index"], int)
        if not 1 <= idx <= n:
            raise ValidationError(f"{path} line {lineno}: index {idx} not in 1..{n}")
        blocks.setdefault(block, []).append(idx)
    if sorted(blocks) != list(range(1, len(blocks) + 1)):
        raise ValidationError(f"{path}: block ids must be 1..p in any row order")
    try:
        return CoarseRanking(blocks[b] for b in sorted(blocks))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def _read_column(path: str, column: str) -> np.ndarray:
    rows = _read_csv(path, (column,))
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    return np.asarray(
        [_parse_number(path, lineno, column, row[column]) for lineno, row in rows]
    )


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _load_config(path: Optional[str]) -> dict[str, Any]:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    params = data.get("params", data)
    if not isinstance(params, dict):
        raise ValidationError(f"{path}: 'params' must be a JSON object")
    return dict(params)


def _effective(args: argparse.Namespace, defaults: dict[str, Any]) -> dict[str, Any]:
    """Config-file values, overridden by explicit flags, backfilled by defaults."""
    params = _load_config(getattr(args, "config", None))
    for key, value in vars(args).items():
        if key in ("command", "config", "func") or value is None:
            continue
        params[key] = value
    for key, value in defaults.items():
        params.setdefault(key, value)
    if params.get("seed") is None:
        params["seed"] = int(os.environ.get("ISOMECH_SEED", "0"))
    params["seed"] = int(params["seed"])
    return params


def _family_from_params(value: Any) -> Family:
    if isinstance(value, dict):
        return family_from_dict(value)
    return family_from_spec(str(value))


def _int_list(value: Any) -> list[int]:
    if isinstance(value, str):
        return [int(tok) for tok in value.replace(",", " ").split()]
    return [int(v) for v in value]


def _float_list(value: Any) -> list[float]:
    if isinstance(value, str):
        return [float(tok) for tok in value.replace(",", " ").split()]
    return [float(v) for v in value]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _require(params: dict[str, Any], key: str, what: str) -> Any:
    value = params.get(key)
    if value in (None, ""):
        raise ValidationError(f"missing {what}; pass it as an argument or in --config")
    return value


def _cmd_fit(args: argparse.Namespace) -> int:
    params = _effective(args, {"out": "adjusted.csv", "format": "csv"})
    if bool(params.get("ranking")) == bool(params.get("blocks")):
        raise ValidationError("fit needs exactly one of --ranking or --blocks")
    scores = _read_scores(_require(params, "scores", "a scores CSV"))
    n = scores.size
    family = _family_from_params(params["family"]) if params.get("family") else None

    coarse = None
    if params.get("ranking"):
        ranking = _read_ranking(params["ranking"], n)
    else:
        coarse = _read_blocks(params["blocks"], n)
        ranking = coarse_to_permutation(coarse, scores)

    if family is not None:
        fit = ranking_constrained_mle(family, scores, ranking)
    elif coarse is not None:
        fit = coarse_isotonic_mechanism(scores, coarse)
    else:
        fit = isotonic_mechanism(scores, ranking)

    header = ["index", "score", "adjusted"] + (["theta"] if family is not None else [])
    rows = []
    for i in range(n):
        row = [i + 1, float(scores[i]), float(fit.mu_hat[i])]
        if family is not None:
            row.append(float(fit.theta_hat[i]))
        rows.append(row)
    out = params["out"]
    _write_table(out, header, rows, params["format"])
    if family is not None:
        params["family"] = family.to_dict()
    _write_sidecar(out, "fit", params, [out])
    return 0


def _cmd_truthfulness(args: argparse.Namespace) -> int:
    params = _effective(
        args,
        {"out": "utilities.csv", "format": "csv", "utility": "relu_square",
         "scores_per_item": 3, "trials": 100_000},
    )
    family = _family_from_params(_require(params, "family", "a family spec"))
    mu_star = _float_list(_require(params, "mu_star", "the true scores mu_star"))
    params["mu_star"] = mu_star
    utility = UtilityFn.from_spec(str(params["utility"]))
    results = rank_all_utilities(
        family, mu_star, utility,
        scores_per_item=int(params["scores_per_item"]),
        trials=int(params["trials"]), seed=params["seed"],
    )
    truthful = Ranking.from_scores(mu_star).perm
    rows = [
        (";".join(map(str, ranking.perm)), est.mean, est.std_error,
         int(ranking.perm == truthful))
        for ranking, est in results
    ]
    out = params["out"]
    _write_table(out, ["ranking", "mean", "std_error", "truthful"], rows, params["format"])
    params["family"] = family.to_dict()
    _write_sidecar(out, "truthfulness", params, [out])
    return 0


def _make_generator(params: dict[str, Any]):
    if params.get("pool"):
        pool = _read_column(str(params["pool"]), "score")
        return PoolResample(pool=tuple(float(v) for v in pool))
    if params.get("mu_star"):
        return ExplicitScores(values=tuple(_float_list(params["mu_star"])))
    return LinearRamp(hi=float(params["ramp_hi"]), lo=float(params["ramp_lo"]))


def _cmd_estimation(args: argparse.Namespace) -> int:
    params = _effective(
        args,
        {"out": "curve.csv", "format": "csv", "scores_per_item": 3,
         "trials": 1000, "ramp_hi": 9.0, "ramp_lo": 3.0},
    )
    family = _family_from_params(_require(params, "family", "a family spec"))
    cfg = EstimationConfig(
        family=family,
        n_grid=tuple(_int_list(_require(params, "n_grid", "an n grid"))),
        generator=_make_generator(params),
        scores_per_item=int(params["scores_per_item"]),
        trials=int(params["trials"]),
        seed=params["seed"],
    )
    points = estimation_error_curve(cfg, max_workers=params.get("threads"))
    rows = [
        (p.n, p.trials, p.mse_im, p.mse_im_se, p.mse_raw, p.mse_raw_se)
        for p in points
    ]
    out = params["out"]
    _write_table(
        out, ["n", "trials", "mse_im", "mse_im_se", "mse_raw", "mse_raw_se"],
        rows, params["format"],
    )
    params["family"] = family.to_dict()
    params["n_grid"] = list(cfg.n_grid)
    _write_sidecar(out, "estimation", params, [out])
    return 0


def _cmd_minimax(args: argparse.Namespace) -> int:
    params = _effective(
        args,
        {"out": "rate.csv", "format": "csv", "trials": 500,
         "construction_out": "construction.json"},
    )
    family = _family_from_params(_require(params, "family", "a family spec"))
    bounds = ScoreBounds(
        float(_require(params, "v_min", "v_min")), float(_require(params, "v_max", "v_max"))
    )
    n_grid = _int_list(_require(params, "n_grid", "an n grid"))
    report = rate_check(
        family, bounds, n_grid, trials=int(params["trials"]),
        seed=params["seed"], max_workers=params.get("threads"),
    )
    out = params["out"]
    rows = [(p.n, p.risk, p.risk_se) for p in report.points]
    _write_table(out, ["n", "risk", "risk_se"], rows, params["format"])

    construction_n = int(params.get("construction_n") or max(n_grid))
    c = params.get("c")
    construction = build_lower_bound(
        family, bounds, construction_n,
        c=float(c) if c is not None else None, seed=params["seed"],
    )
    margins = construction.verify()
    summary = {
        "n": construction.n,
        "k": construction.k,
        "c": construction.c,
        "gamma": construction.gamma,
        "codewords": construction.size,
        "target": construction.target_size,
        "block_sizes": sorted(set(construction.block_sizes)),
        "margins": margins,
        "slope": report.slope,
        "intercept": report.intercept,
    }
    cons_out = params["construction_out"]
    with open(cons_out, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    params["family"] = family.to_dict()
    params["n_grid"] = list(n_grid)
    _write_sidecar(out, "minimax", params, [out, cons_out])
    print(f"slope={report.slope:.6g} intercept={report.intercept:.6g}")
    return 0


def _read_reviews(path: str) -> list[ReviewRecord]:
    rows = _read_csv(path, ("submission_id", "score", "confidence"))
    return [
        ReviewRecord(
            submission_id=row["submission_id"],
            score=_parse_number(path, lineno, "score", row["score"]),
            confidence=_parse_number(path, lineno, "confidence", row["confidence"], int),
        )
        for lineno, row in rows
    ]


def _read_authors(path: str) -> list[AuthorRecord]:
    rows = _read_csv(path, ("author_id", "submission_ids", "ranking"))
    authors = []
    for lineno, row in rows:
        sids = tuple(tok.strip() for tok in row["submission_ids"].split(";") if tok.strip())
        ranks = tuple(
            _parse_number(path, lineno, "ranking", tok, int)
            for tok in row["ranking"].split(";") if tok.strip()
        )
        if len(sids) != len(ranks):
            raise ValidationError(
                f"{path} line {lineno}: {len(sids)} submissions but {len(ranks)} ranks"
            )
        authors.append(AuthorRecord(row["author_id"], sids, ranks))
    return authors


def _cmd_icml(args: argparse.Namespace) -> int:
    params = _effective(args, {"out": "table1.csv", "format": "csv"})
    reviews = _read_reviews(_require(params, "reviews", "a reviews CSV"))
    authors = _read_authors(_require(params, "authors", "an authors CSV"))
    report = surrogate_eval(reviews, authors, seed=params["seed"])
    rows = [
        (r.n, r.authors, r.mse_raw, r.mse_im,
         None if r.improvement is None else r.improvement)
        for r in report.rows
    ]
    out = params["out"]
    _write_table(out, ["n", "authors", "mse_raw", "mse_im", "improvement"], rows, params["format"])
    params["skipped_submissions"] = report.skipped_submissions
    params["skipped_authors"] = report.skipped_authors
    params["tie_breaks"] = report.tie_breaks
    _write_sidecar(out, "icml", params, [out])
    return 0


def _cmd_synthetic(args: argparse.Namespace) -> int:
    params = _effective(
        args, {"out": "table2.csv", "format": "csv", "trials": 1000,
               "n_grid": list(range(2, 18))},
    )
    pool = _read_column(str(_require(params, "pool", "a score-pool CSV")), "score")
    rows_out = synthetic_icml_study(
        pool, n_grid=_int_list(params["n_grid"]), trials=int(params["trials"]),
        seed=params["seed"], max_workers=params.get("threads"),
    )
    rows = [
        (r.n, r.trials, r.mse_im_mean, r.mse_im_std, r.mse_raw_mean,
         r.mse_raw_std, r.improvement)
        for r in rows_out
    ]
    out = params["out"]
    _write_table(
        out,
        ["n", "trials", "mse_im_mean", "mse_im_std", "mse_raw_mean", "mse_raw_std", "improvement"],
        rows, params["format"],
    )
    params["n_grid"] = _int_list(params["n_grid"])
    _write_sidecar(out, "synthetic", params, [out])
    return 0


def _cmd_check_majorization(args: argparse.Namespace) -> int:
    params = _effective(args, {"mode": "standard"})
    a = _read_column(_require(params, "a", "the first vector CSV"), "value")
    b = _read_column(_require(params, "b", "the second vector CSV"), "value")
    mode = str(params["mode"])
    predicate = {
        "standard": majorizes,
        "natural": majorizes_natural_order,
        "weak": weakly_majorizes,
    }.get(mode)
    if predicate is None:
        raise ValidationError(f"unknown mode {mode!r}; pick standard, natural, or weak")
    print("true" if predicate(a, b) else "false")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isomech",
        description="Ranking-constrained score adjustment and its experiment suite.",
    )
    parser.add_argument("--version", action="version", version=f"isomech {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config or replay sidecar; flags override")
        p.add_argument("--seed", type=int, help="RNG seed (fallback: ISOMECH_SEED, then 0)")
        p.add_argument("--threads", type=int, help="max worker threads for Monte-Carlo chunks")
        p.add_argument("--out", help="output file path")
        p.add_argument("--format", choices=["csv", "json"], help="output format (default csv)")

    p = sub.add_parser("fit", help="adjust one score vector under a ranking or blocks")
    p.add_argument("scores", nargs="?", help="CSV with header index,score")
    p.add_argument("--ranking", help="CSV with header rank,index (rank 1 = best)")
    p.add_argument("--blocks", help="CSV with header block,index (block 1 = best)")
    p.add_argument("--family", help="family spec, e.g. binomial:10 or JSON")
    common(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("truthfulness", help="expected utility of every ranking")
    p.add_argument("--family", help="family spec")
    p.add_argument("--mu-star", dest="mu_star", help="true scores, e.g. '8,7,6,4'")
    p.add_argument("--utility", help="relu_square | identity | exp:ALPHA | hinge:T")
    p.add_argument("--scores-per-item", dest="scores_per_item", type=int)
    p.add_argument("--trials", type=int)
    common(p)
    p.set_defaults(func=_cmd_truthfulness)

    p = sub.add_parser("estimation", help="error of adjusted vs raw scores across n")
    p.add_argument("--family", help="family spec")
    p.add_argument("--n-grid", dest="n_grid", help="submission counts, e.g. '10,50,200'")
    p.add_argument("--ramp-hi", dest="ramp_hi", type=float)
    p.add_argument("--ramp-lo", dest="ramp_lo", type=float)
    p.add_argument("--pool", help="CSV score pool (header: score) to resample true scores")
    p.add_argument("--mu-star", dest="mu_star", help="explicit true scores")
    p.add_argument("--scores-per-item", dest="scores_per_item", type=int)
    p.add_argument("--trials", type=int)
    common(p)
    p.set_defaults(func=_cmd_estimation)

    p = sub.add_parser("minimax", help="risk-vs-n slope plus the lower-bound construction")
    p.add_argument("--family", help="family spec")
    p.add_argument("--v-min", dest="v_min", type=float)
    p.add_argument("--v-max", dest="v_max", type=float)
    p.add_argument("--n-grid", dest="n_grid", help="e.g. '64,256,1024,4096'")
    p.add_argument("--trials", type=int)
    p.add_argument("--construction-n", dest="construction_n", type=int)
    p.add_argument("--c", type=float, help="packing perturbation scale (default c_var/16)")
    p.add_argument("--construction-out", dest="construction_out")
    common(p)
    p.set_defaults(func=_cmd_minimax)

    p = sub.add_parser("icml", help="surrogate-truth evaluation of review/author CSVs")
    p.add_argument("reviews", nargs="?", help="CSV: submission_id,score,confidence")
    p.add_argument("authors", nargs="?", help="CSV: author_id,submission_ids,ranking")
    common(p)
    p.set_defaults(func=_cmd_icml)

    p = sub.add_parser("synthetic", help="synthetic review study from a score pool")
    p.add_argument("pool", nargs="?", help="one-column CSV (header: score)")
    p.add_argument("--n-grid", dest="n_grid")
    p.add_argument("--trials", type=int)
    common(p)
    p.set_defaults(func=_cmd_synthetic)

    p = sub.add_parser("check-majorization", help="majorization verdict for two vectors")
    p.add_argument("a", nargs="?", help="one-column CSV (header: value)")
    p.add_argument("b", nargs="?", help="one-column CSV (header: value)")
    p.add_argument("--mode", choices=["standard", "natural", "weak"])
    common(p)
    p.set_defaults(func=_cmd_check_majorization)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IsomechError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
