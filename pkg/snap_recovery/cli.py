"""
Command line entry point: snap-recovery {generate,train,eval,episode}

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 training or evaluation failure.
"""

import argparse
import json
import logging
import sys
from collections import OrderedDict
from pathlib import Path

from snap_recovery import parsing
from snap_recovery.bundle import FORMAT_VERSION, load_bundle, save_bundle, train_bundle
from snap_recovery.exceptions import (
    DataError,
    IncompatibleModel,
    Misconfigured,
    RankError,
    SnapRecoveryError,
)
from snap_recovery.probe import IdentificationPolicyConfig, fuse_probe_results, identify
from snap_recovery.profile import GRID_EPS, PROBE_PHASES, OffsetPattern, PhaseTag, StateLabel, load_dataset
from snap_recovery.sim import (
    TRAIN_SPLIT,
    VALIDATION_SPLIT,
    VALIDATION_TRIALS,
    PlantConfig,
    run_episode,
    training_offsets,
    validation_offsets,
    write_dataset,
)
from snap_recovery.tree import TrainingConfig, classify_profile


EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_FAILURE = 3

MODES = ('assembly_only', 'probe_only', 'probe_after_assembly')


logger = logging.getLogger(__name__)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------- Helpers ----------------------------------


def _load_plant_config(path):
    return PlantConfig.from_dict(parsing.load_settings(path))


def _load_offsets(path):
    if path is None:
        return training_offsets()
    with open(path, encoding='utf-8') as f:
        try:
            pairs = json.load(f)
        except json.JSONDecodeError as e:
            raise Misconfigured(f"Grid '{path}' is not valid JSON: {e}") from e
    try:
        return [OffsetPattern(float(dx), float(dtheta)) for dx, dtheta in pairs]
    except (TypeError, ValueError) as e:
        raise Misconfigured(f"Grid '{path}' must be a list of [dx, dtheta] pairs") from e


def _write_report(report, out):
    text = json.dumps(report, indent=1, sort_keys=True) + '\n'
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding='utf-8')
        logger.info(f"Wrote report to {out}")


def render_table(header, rows):
    """ Plain-text table with right-aligned columns """
    cells = [[str(h) for h in header]] + [[_cell(v) for v in row] for row in rows]
    widths = [max(len(row[k]) for row in cells) for k in range(len(header))]
    lines = ['  '.join(cell.rjust(width) for cell, width in zip(row, widths)) for row in cells]
    lines.insert(1, '  '.join('-' * width for width in widths))
    return '\n'.join(lines) + '\n'


def _cell(value):
    if value is None:
        return '-'
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


# ---------------------------------- Commands ----------------------------------


def cmd_generate(args):
    plant_config = _load_plant_config(args.plant_config)
    seed = plant_config.rng_seed if args.seed is None else args.seed
    if seed < 0:
        raise Misconfigured(f"Seed must be nonnegative, got {seed}")
    out = Path(args.out)
    train = write_dataset(out / 'train', _load_offsets(args.grid), plant_config, seed, TRAIN_SPLIT)
    validation = write_dataset(out / 'validation', validation_offsets(), plant_config, seed,
                               VALIDATION_SPLIT, trials=args.trials)
    n_success = sum(1 for entry in validation if entry['label'] == StateLabel.SUCCESS)
    report = {
        'format_version': FORMAT_VERSION,
        'command': 'generate',
        'seed': seed,
        'config_hash': parsing.config_hash(plant_config.to_dict()),
        'plant_config': plant_config.to_dict(),
        'train_samples': len(train),
        'validation_samples': len(validation),
        'validation_success': n_success,
        'validation_error': len(validation) - n_success,
    }
    _write_report(report, Path(args.out) / 'generate_report.json')
    return report


def cmd_train(args):
    config = TrainingConfig.from_dict(parsing.load_settings(args.config))
    overrides = {}
    if args.eq1_corrected:
        overrides['eq1_corrected'] = True
    if args.jobs is not None:
        overrides['n_jobs'] = args.jobs
    config = TrainingConfig.from_dict({**config.to_dict(), **overrides})

    samples = load_dataset(args.dataset)
    logger.info(f"Training on {len(samples)} samples at t_span {args.t_span}")
    bundle = train_bundle(samples, args.t_span, config)
    save_bundle(args.out, bundle)

    rows = []
    for phase_tag in PhaseTag:
        for node in bundle.tree(phase_tag).internal_nodes:
            rows.append((phase_tag.value, node.node_id, node.channel.name,
                         ' '.join(str(s) for s in node.partition), 100.0 * node.accuracy))
    sys.stdout.write(render_table(('phase', 'node', 'channel', 'C', 'accuracy (%)'), rows))
    return bundle


def evaluate(bundle, samples, mode, policy):
    """
    Identify every sample in the chosen mode

    Return:
        The report dict: overall and per-state success rates, probing counts and
        the per-offset table of all rates the dataset supports
    """
    if mode not in MODES:
        raise Misconfigured(f"Unknown mode '{mode}'. Must be one of {list(MODES)}")
    has_probes = all(all(phase in sample.profile_set for phase in PROBE_PHASES) for sample in samples)
    if mode != 'assembly_only' and not has_probes:
        raise IncompatibleModel(f"Mode {mode} needs probe profiles for every sample")
    for sample in samples:
        if sample.profile(PhaseTag.ASSEMBLY).duration + GRID_EPS < bundle.t_span:
            raise IncompatibleModel(f"Assembly profile of {sample.profile(PhaseTag.ASSEMBLY).duration}s "
                                    f"is shorter than the model's t_span {bundle.t_span}s")

    trees = bundle.trees
    per_state = OrderedDict((str(label), {'count': 0, 'correct': 0}) for label in StateLabel)
    per_offset = OrderedDict()
    probing_triggered = improved = deteriorated = 0

    for sample in samples:
        assembly = classify_profile(trees[PhaseTag.ASSEMBLY], sample.profile(PhaseTag.ASSEMBLY))
        predictions = {'assembly_only': assembly.predicted}
        if has_probes:
            probes = [classify_profile(trees[phase], sample.profile(phase)) for phase in PROBE_PHASES]
            predictions['probe_only'], _ = fuse_probe_results(*probes)
            result = identify(sample.profile(PhaseTag.ASSEMBLY), trees, sample.profile, policy)
            predictions['probe_after_assembly'] = result.predicted
            if mode == 'probe_after_assembly':
                probing_triggered += result.used_probing
                assembly_right = assembly.predicted is sample.label
                final_right = result.predicted is sample.label
                improved += final_right and not assembly_right
                deteriorated += assembly_right and not final_right

        state = per_state[str(sample.label)]
        state['count'] += 1
        state['correct'] += predictions[mode] is sample.label

        key = (sample.offset.dx, sample.offset.dtheta_z)
        row = per_offset.setdefault(key, {'label': str(sample.label), 'count': 0,
                                          **{m: 0 for m in predictions}})
        row['count'] += 1
        for m, predicted in predictions.items():
            row[m] += predicted is sample.label

    for state in per_state.values():
        state['rate'] = None if state['count'] == 0 else state['correct'] / state['count']
    correct = sum(state['correct'] for state in per_state.values())
    report = {
        'format_version': FORMAT_VERSION,
        'command': 'eval',
        'mode': mode,
        't_span': bundle.t_span,
        'n_samples': len(samples),
        'success_rate': correct / len(samples) if samples else None,
        'per_state': {name: state for name, state in per_state.items() if state['count']},
        'per_offset': [
            {'offset': {'dx': dx, 'dtheta_z': dtheta}, 'label': row['label'], 'count': row['count'],
             'rates': {m: row[m] / row['count'] for m in MODES if m in row}}
            for (dx, dtheta), row in per_offset.items()
        ],
    }
    if mode == 'probe_after_assembly':
        report.update(probing_triggered=probing_triggered, improved=improved, deteriorated=deteriorated)
    return report


def eval_table(report):
    modes = [m for m in MODES if report['per_offset'] and m in report['per_offset'][0]['rates']]
    rows = []
    for row in report['per_offset']:
        offset = row['offset']
        rows.append((row['label'], offset['dx'], offset['dtheta_z'],
                     *(100.0 * row['rates'][m] for m in modes)))
    header = ('state', 'dx (mm)', 'dtheta (deg)', *(f"{m} (%)" for m in modes))
    text = render_table(header, rows)
    text += f"\n{report['mode']} success rate: {100.0 * report['success_rate']:.1f}%\n"
    return text


def cmd_eval(args):
    bundle = load_bundle(args.model)
    policy = IdentificationPolicyConfig.from_dict(
        {**parsing.load_settings(args.config), 't_span': bundle.t_span})
    samples = load_dataset(args.dataset)
    report = evaluate(bundle, samples, args.mode, policy)
    report['seed'] = args.seed
    report['config_hash'] = parsing.config_hash({'policy': policy.to_dict(),
                                                 'training': bundle.training_config})
    _write_report(report, args.out)
    if args.table:
        sys.stdout.write(eval_table(report))
    return report


def cmd_episode(args):
    bundle = load_bundle(args.model)
    plant_config = _load_plant_config(args.plant_config)
    policy = IdentificationPolicyConfig.from_dict(
        {**parsing.load_settings(args.config), 't_span': bundle.t_span})
    offset = OffsetPattern(args.dx, args.dtheta)
    log = run_episode(offset, bundle.trees, policy, plant_config, args.seed)
    report = {
        'format_version': FORMAT_VERSION,
        'command': 'episode',
        'seed': args.seed,
        'config_hash': parsing.config_hash({'plant': plant_config.to_dict(), 'policy': policy.to_dict()}),
        'true_offset': offset.to_dict(),
        'episode': log.to_dict(),
    }
    _write_report(report, args.out)
    return log


# ------------------------------------ Main ------------------------------------


def build_parser():
    parser = ArgumentParser(prog='snap-recovery', description='Snap-assembly failure prediction and recovery.')
    parser.add_argument('--log-level', default='WARNING',
                        choices=('DEBUG', 'INFO', 'WARNING', 'ERROR'))
    commands = parser.add_subparsers(dest='command', required=True, parser_class=ArgumentParser)

    generate = commands.add_parser('generate', help='simulate training and validation datasets')
    generate.add_argument('--out', required=True, help='dataset root directory')
    generate.add_argument('--plant-config', help='plant config JSON')
    generate.add_argument('--grid', help='JSON list of [dx, dtheta] training offsets')
    generate.add_argument('--seed', type=int)
    generate.add_argument('--trials', type=int, default=VALIDATION_TRIALS, help='validation trials per offset')
    generate.set_defaults(handler=cmd_generate)

    train = commands.add_parser('train', help='fit fPCA models and decision trees')
    train.add_argument('dataset', help='dataset directory holding a manifest')
    train.add_argument('--out', required=True, help='model bundle path')
    train.add_argument('--t-span', type=float, default=2.0)
    train.add_argument('--config', help='training config JSON')
    train.add_argument('--eq1-corrected', action='store_true')
    train.add_argument('--jobs', type=int)
    train.set_defaults(handler=cmd_train)

    evaluation = commands.add_parser('eval', help='identify a validation dataset')
    evaluation.add_argument('model')
    evaluation.add_argument('dataset')
    evaluation.add_argument('--mode', choices=MODES, default='probe_after_assembly')
    evaluation.add_argument('--config', help='policy config JSON')
    evaluation.add_argument('--seed', type=int)
    evaluation.add_argument('--out', help='report path, stdout by default')
    evaluation.add_argument('--table', action='store_true', help='print the per-offset table')
    evaluation.set_defaults(handler=cmd_eval)

    episode = commands.add_parser('episode', help='run one closed-loop recovery episode')
    episode.add_argument('model')
    episode.add_argument('--dx', type=float, required=True)
    episode.add_argument('--dtheta', type=float, required=True)
    episode.add_argument('--seed', type=int, default=0)
    episode.add_argument('--plant-config', help='plant config JSON')
    episode.add_argument('--config', help='policy config JSON')
    episode.add_argument('--out', help='log path, stdout by default')
    episode.set_defaults(handler=cmd_episode)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format='%(levelname)s %(name)s: %(message)s')
    try:
        args.handler(args)
    except (Misconfigured, DataError, RankError, IncompatibleModel, OSError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_DATA
    except SnapRecoveryError as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
