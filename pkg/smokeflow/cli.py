"""
Command-line front end.

Every subcommand prints one JSON response on stdout, {"success": true, ...} on
success or {"success": false, "error": "<ErrorName>: <message>"} on failure,
and returns 0, 1 (bad input or configuration) or 2 (runtime failure).

Settings come from defaults < JSON config file (--config) < flags.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Optional

import pandas as pd

from .experiments import channel_analysis, flow_benchmark, noise_robustness, smoke_sequence
from .fields import NoiseSpec, add_noise, gradients
from .flowviz import auto_max_mag, channel_dominance, flow_to_color, quantize_colormap
from .gmm import GmmConfig, save_model, segment_colormap
from .imgio import read_flo, read_image, read_mask, write_flo, write_image, write_mask
from .metrics import evaluate, ssim
from .solver import SolverParams, estimate_flow, run_pipeline
from .utils import (
    LOG_LEVEL,
    ConfigError,
    PreconditionError,
    SmokeflowError,
    atomic_write,
    configure_logging,
    require_file,
)

# --- Logging setup ---
logger = logging.getLogger(__name__)

LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL')
EXPERIMENTS = ('robustness', 'channels', 'benchmark')


# =============================================================================
# CONFIGURATION
# =============================================================================

@dataclasses.dataclass
class RunConfig:
    solver: SolverParams = dataclasses.field(default_factory=SolverParams)
    gmm: GmmConfig = dataclasses.field(default_factory=GmmConfig)
    noise: NoiseSpec = dataclasses.field(default_factory=NoiseSpec)
    log_level: str = LOG_LEVEL


def _config_keys() -> Dict[str, tuple]:
    """Flat config key -> (section, attribute, type)"""
    keys = {f.name: ('solver', f.name, type(f.default)) for f in dataclasses.fields(SolverParams)}
    keys.update({
        'K': ('gmm', 'K', int),
        'gmm_seed': ('gmm', 'seed', int),
        'gmm_tol': ('gmm', 'tol', float),
        'gmm_max_iter': ('gmm', 'max_iter', int),
        'white_tol': ('gmm', 'white_tol', float),
        'min_component_px': ('gmm', 'min_component_px', int),
        'closing_radius': ('gmm', 'closing_radius', int),
        'max_mag': ('gmm', 'max_mag', float),
        'noise_kind': ('noise', 'kind', str),
        'noise_mean': ('noise', 'mean', float),
        'noise_sigma': ('noise', 'sigma', float),
        'noise_density': ('noise', 'density', float),
        'noise_seed': ('noise', 'seed', int),
        'log_level': (None, 'log_level', str),
    })
    return keys


CONFIG_KEYS = _config_keys()

# Flag spelling where it differs from the config key
FLAG_NAMES = {
    'lam': '--lambda',
    'outer_iters': '--iters',
    'h': '--grid-spacing',
}


def _coerce(key: str, value: Any, kind: type) -> Any:
    if value is None and key == 'max_mag':
        return None
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ('true', '1', 'yes'):
                return True
            if text in ('false', '0', 'no'):
                return False
            raise ValueError(value)
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind is float:
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid {kind.__name__} value {value!r}", key=key) from None


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Read a flat JSON config file

    Raises:
        MissingFile: No such file
        ConfigError: Not a JSON object, or an unknown key
    """
    require_file(path)
    try:
        with open(path) as f:
            values = json.load(f)
    except ValueError as e:
        raise ConfigError(f"invalid JSON: {e}", path=path) from e
    if not isinstance(values, dict):
        raise ConfigError('config must be a JSON object', path=path)
    for key in values:
        if key not in CONFIG_KEYS:
            raise ConfigError('unknown config key', key=key)
    return values


def build_run_config(file_values: Optional[Dict[str, Any]] = None,
                     flag_values: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Merge defaults, file values and flags (later wins) and validate everything

    Raises:
        ConfigError, PreconditionError: naming the offending key
    """
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (flag_values or {}).items() if v is not None})

    sections: Dict[Optional[str], Dict[str, Any]] = {'solver': {}, 'gmm': {}, 'noise': {}, None: {}}
    for key, value in merged.items():
        if key not in CONFIG_KEYS:
            raise ConfigError('unknown config key', key=key)
        section, attr, kind = CONFIG_KEYS[key]
        sections[section][attr] = _coerce(key, value, kind)

    solver = SolverParams(**sections['solver']).validate()
    gmm = GmmConfig(**sections['gmm']).validate()
    try:
        noise = NoiseSpec(**sections['noise'])
    except PreconditionError as e:
        raise ConfigError(str(e).split(': ', 1)[-1], key=f"noise_{e.key}") from e

    log_level = sections[None].get('log_level', LOG_LEVEL).upper()
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"must be one of {LOG_LEVELS}", key='log_level')
    return RunConfig(solver=solver, gmm=gmm, noise=noise, log_level=log_level)


# =============================================================================
# HELPERS
# =============================================================================

def write_csv(df: pd.DataFrame, path: str) -> None:
    with atomic_write(path) as tmp:
        df.to_csv(tmp, index=False)


@contextlib.contextmanager
def _diagnostics_sink(path: Optional[str]):
    if path is None:
        yield None
        return
    with atomic_write(path) as tmp:
        with open(tmp, 'w') as sink:
            yield sink


def _stem_base(path: str, suffix: str) -> str:
    base = os.path.splitext(path)[0]
    return base[:-len(suffix)] if suffix and base.endswith(suffix) else base


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def cmd_flow(args, config: RunConfig) -> dict:
    frame1 = read_image(args.frame1)
    frame2 = read_image(args.frame2)
    with _diagnostics_sink(args.diagnostics) as sink:
        result = estimate_flow(frame1, frame2, config.solver, diagnostics=sink)
    write_flo(result.flow, args.out)
    if args.trace:
        write_csv(result.trace_frame(), args.trace)
    return {
        'out': args.out,
        'width': frame1.width,
        'height': frame1.height,
        'iterations': len(result.residual_trace),
        'stability': result.stability.to_record(),
        'energy': result.energy_trace[-1].to_record(),
        'residual': result.residual_trace[-1],
    }


def cmd_colorize(args, config: RunConfig) -> dict:
    flow = read_flo(args.flo)
    max_mag = config.gmm.max_mag if config.gmm.max_mag is not None else auto_max_mag(flow)
    colormap = quantize_colormap(flow_to_color(flow, max_mag))
    out = args.out or _stem_base(args.flo, '') + '_color.png'
    write_image(colormap, out)
    return {'out': out, 'max_mag': max_mag, 'dominance': dict(zip('RGB', channel_dominance(colormap)))}


def cmd_segment(args, config: RunConfig) -> dict:
    colormap = read_image(args.colormap)
    model, mask, fused = segment_colormap(colormap, config.gmm)
    base = _stem_base(args.colormap, '_color')
    mask_path = args.mask or base + '_mask.png'
    fused_path = args.fused or base + '_fused.png'
    write_mask(mask, mask_path)
    write_image(fused, fused_path)
    if args.model:
        save_model(model, args.model)
    return {
        'mask': mask_path,
        'fused': fused_path,
        'K': model.K,
        'smoke_fraction': float(mask.mean()),
        'loglik': model.loglik_trace[-1],
    }


def cmd_eval(args, config: RunConfig) -> dict:
    pred = read_flo(args.pred)
    gt = read_flo(args.gt)
    frame1 = read_image(args.image)
    frame2 = read_image(args.image2) if args.image2 else frame1
    mask = read_mask(args.mask) if args.mask else None
    g = gradients(frame1, frame2, config.solver.presmooth_sigma)
    return evaluate(pred, gt, g, mask=mask, grad_floor=args.grad_floor).to_record()


def cmd_ssim(args, config: RunConfig) -> dict:
    return {'ssim': ssim(read_image(args.a), read_image(args.b))}


def cmd_noise(args, config: RunConfig) -> dict:
    noisy = add_noise(read_image(args.image), config.noise)
    write_image(noisy, args.out)
    return {'out': args.out, 'noise': dataclasses.asdict(config.noise)}


def cmd_pipeline(args, config: RunConfig) -> dict:
    frame1 = read_image(args.frame1)
    frame2 = read_image(args.frame2)
    with _diagnostics_sink(args.diagnostics) as sink:
        out = run_pipeline(frame1, frame2, config.solver, config.gmm, out_dir=args.out,
                           stem=args.stem, diagnostics=sink)
    response = {
        'outputs': out.paths(args.out, args.stem),
        'max_mag': out.max_mag,
        'smoke_fraction': float(out.mask.mean()),
        'stability': out.result.stability.to_record(),
    }
    if args.gt:
        g = gradients(frame1, frame2, config.solver.presmooth_sigma)
        metrics = evaluate(out.flow, read_flo(args.gt), g).to_record()
        metrics_path = os.path.join(args.out, f"{args.stem}_metrics.json")
        with atomic_write(metrics_path) as tmp:
            with open(tmp, 'w') as f:
                json.dump(metrics, f, indent=2, sort_keys=True)
        response['metrics'] = metrics
    return response


def _batch_names(rows: List[dict]) -> List[str]:
    """Output stems per row; repeated names get their row index appended"""
    names = [str(row.get('name') or f"pair{i:04d}") for i, row in enumerate(rows)]
    counts = Counter(names)
    return [f"{name}_{i:04d}" if counts[name] > 1 else name for i, name in enumerate(names)]


def _batch_one(name: str, row: dict, base_dir: str, out_dir: str, config: RunConfig) -> dict:
    frame1_path = os.path.join(base_dir, str(row['frame1']))
    frame2_path = os.path.join(base_dir, str(row['frame2']))
    record = {'name': name, 'frame1': frame1_path, 'frame2': frame2_path}
    try:
        frame1 = read_image(frame1_path)
        out = run_pipeline(frame1, read_image(frame2_path), config.solver, config.gmm,
                           out_dir=out_dir, stem=name)
        appearance = os.path.join(out_dir, f"{name}_frame.png")
        write_image(frame1, appearance)
        record.update(out.paths(out_dir, name))
        record.update({'frame': appearance, 'smoke_fraction': float(out.mask.mean()), 'status': 'ok'})
    except SmokeflowError as e:
        logger.error("Pair %s failed: %s", name, e)
        record['status'] = f"{e.name}: {e}"
    return record


def cmd_batch(args, config: RunConfig) -> dict:
    require_file(args.pairs)
    pairs = pd.read_csv(args.pairs, dtype=str, keep_default_na=False)
    missing = {'frame1', 'frame2'} - set(pairs.columns)
    if missing:
        raise ConfigError(f"pairs file lacks columns {sorted(missing)}", path=args.pairs)
    if args.workers < 1:
        raise ConfigError('must be >= 1', key='workers')

    os.makedirs(args.out, exist_ok=True)
    base_dir = os.path.dirname(os.path.abspath(args.pairs))
    rows = pairs.to_dict(orient='records')
    names = _batch_names(rows)
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        records: List[dict] = list(pool.map(
            lambda item: _batch_one(item[0], item[1], base_dir, args.out, config), zip(names, rows)))

    manifest = os.path.join(args.out, 'manifest.csv')
    write_csv(pd.DataFrame(records), manifest)
    failed = sum(r['status'] != 'ok' for r in records)
    logger.info("Batch: %d pairs, %d failed", len(records), failed)
    return {'manifest': manifest, 'pairs': len(records), 'failed': failed}


def cmd_experiment(args, config: RunConfig) -> dict:
    if args.name == 'benchmark':
        table = flow_benchmark(config.solver, size=args.size)
    else:
        frame1, frame2, _ = smoke_sequence(size=args.size, seed=config.solver.seed)
        if args.name == 'robustness':
            table = noise_robustness(frame1, frame2, config.solver)
        else:
            flow = estimate_flow(frame1, frame2, config.solver).flow
            max_mag = config.gmm.max_mag if config.gmm.max_mag is not None else auto_max_mag(flow)
            table = channel_analysis(flow_to_color(flow, max_mag))
    if args.out:
        write_csv(table, args.out)
    return {'name': args.name, 'rows': table.to_dict(orient='records')}


def cmd_channels(args, config: RunConfig) -> dict:
    return {'rows': channel_analysis(read_image(args.image)).to_dict(orient='records')}


# =============================================================================
# PARSER
# =============================================================================

class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise ConfigError(message)


def _config_parent() -> argparse.ArgumentParser:
    parent = _Parser(add_help=False)
    parent.add_argument('--config', help='JSON config file')
    for key in CONFIG_KEYS:
        flag = FLAG_NAMES.get(key, '--' + key.replace('_', '-'))
        if CONFIG_KEYS[key][2] is bool:
            parent.add_argument(flag, dest=key, action='store_const', const=True, default=None)
        else:
            parent.add_argument(flag, dest=key, default=None)
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = _Parser(prog='smokeflow', description='Fractional-order level-set optical flow and smoke masks')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('flow', parents=[parent], help='two frames -> .flo')
    p.add_argument('--frame1', required=True)
    p.add_argument('--frame2', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--diagnostics', help='per-iteration JSON lines')
    p.add_argument('--trace', help='per-iteration CSV table')
    p.set_defaults(handler=cmd_flow)

    p = sub.add_parser('colorize', parents=[parent], help='.flo -> colour map PNG')
    p.add_argument('flo')
    p.add_argument('--out')
    p.set_defaults(handler=cmd_colorize)

    p = sub.add_parser('segment', parents=[parent], help='colour map -> mask and fused PNG')
    p.add_argument('colormap')
    p.add_argument('--mask')
    p.add_argument('--fused')
    p.add_argument('--model', help='store the fitted mixture as JSON')
    p.set_defaults(handler=cmd_segment)

    p = sub.add_parser('eval', parents=[parent], help='flow metrics against ground truth')
    p.add_argument('--pred', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--image', required=True)
    p.add_argument('--image2')
    p.add_argument('--mask')
    p.add_argument('--grad-floor', type=float, default=1.0)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser('ssim', parents=[parent], help='SSIM of two images')
    p.add_argument('a')
    p.add_argument('b')
    p.set_defaults(handler=cmd_ssim)

    p = sub.add_parser('noise', parents=[parent], help='corrupt an image')
    p.add_argument('image')
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_noise)

    p = sub.add_parser('pipeline', parents=[parent], help='two frames -> flow, colour map, mask, fused')
    p.add_argument('--frame1', required=True)
    p.add_argument('--frame2', required=True)
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--stem', default='pair')
    p.add_argument('--gt', help='ground-truth .flo for metrics')
    p.add_argument('--diagnostics')
    p.set_defaults(handler=cmd_pipeline)

    p = sub.add_parser('batch', parents=[parent], help='pipeline over a CSV of frame pairs')
    p.add_argument('--pairs', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--workers', type=int, default=1)
    p.set_defaults(handler=cmd_batch)

    p = sub.add_parser('experiment', parents=[parent], help='synthetic experiments')
    p.add_argument('--name', required=True, choices=EXPERIMENTS)
    p.add_argument('--size', type=int, default=64)
    p.add_argument('--out', help='CSV table')
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser('channels', parents=[parent], help='channel dominance of a colour map')
    p.add_argument('image')
    p.set_defaults(handler=cmd_channels)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        flags = {key: getattr(args, key) for key in CONFIG_KEYS}
        file_values = load_config_file(args.config) if args.config else {}
        config = build_run_config(file_values, flags)
        configure_logging(config.log_level)
        response = {'success': True, **args.handler(args, config)}
        code = 0
    except SmokeflowError as e:
        logger.error("%s: %s", e.name, e)
        response = {'success': False, 'error': f"{e.name}: {e}"}
        code = e.exit_code
    except Exception as e:
        logger.exception("Unexpected error")
        response = {'success': False, 'error': f"Unexpected error: {e}"}
        code = 2
    print(json.dumps(response, default=str))
    return code


if __name__ == '__main__':
    sys.exit(main())
