#!/usr/bin/env python3
"""
Command line entry point: ingest, train, eval, explain, diffuse, verify,
baseline and combine
"""
import logging
import os
import sys
from typing import Callable, Dict, List, Optional, Tuple

import arrow
import numpy as np
import pandas as pd
from tabulate import tabulate

from gexse import __version__
from gexse.data import ingest
from gexse.data.teacher import load_teacher_table, teacher_matrix
from gexse.data.windows import WindowSet, check_disjoint
from gexse.diffusion import (
    MIXTURE_STD, TWO_MODES, DiffusionConfig, DiffusionModels, classifier_accuracy,
    classifier_log_prob, guided_sample, load_models, make_mixture, save_models, schedule,
    train_denoiser, train_noisy_classifier, write_samples_csv
)
from gexse.encoder import EncoderConfig, config_for, encode, load_checkpoint
from gexse.evaluator import (
    alignment_accuracy, combine_reports, confusion, emit_report, load_summary, metrics
)
from gexse.explain import CueConstants, baseline_activations, map_cues, quantify_activations, \
    render_frames
from gexse.misc import (
    ConfigError, DataError, GexseException, NumericError, make_rng, parse_args, resolve_config,
    timed, write_run_manifest
)
from gexse.persistence import read_cache, write_cache
from gexse.trainer import TrainConfig, train, train_linear_probe
from gexse.verify import format_report, run_suites

logger = logging.getLogger(__name__)

MIXTURE_POINTS = 5000
CACHE_SUFFIX = '.gxws'


def cache_paths(directory: str, dataset_id: str) -> Tuple[str, str]:
    """ <dir>/<dataset>_train.gxws and <dir>/<dataset>_test.gxws """
    return tuple(os.path.join(directory, '{}_{}{}'.format(dataset_id, split, CACHE_SUFFIX))
                 for split in ('train', 'test'))


def _read_split(args, conf: Dict) -> Tuple[WindowSet, WindowSet]:
    directory = getattr(args, 'cache_dir', None) or conf['out']
    train_path, test_path = cache_paths(directory, conf['dataset'])
    train_ws, test_ws = read_cache(train_path), read_cache(test_path)
    check_disjoint(train_ws, test_ws)
    return train_ws, test_ws


def _check_window_shape(ws: WindowSet, cfg: EncoderConfig, path: str) -> None:
    if (ws.channels, ws.length) != (cfg.in_channels, cfg.window_length):
        raise DataError('{} holds windows of {}×{}, the checkpoint expects {}×{}'.format(
            path, ws.channels, ws.length, cfg.in_channels, cfg.window_length))
    if ws.num_classes != cfg.num_classes:
        raise DataError('{} has {} classes, the checkpoint {}'.format(
            path, ws.num_classes, cfg.num_classes))


def cmd_ingest(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    if not conf.get('root'):
        raise ConfigError('ingest needs --root')
    with timed(timings, 'ingest'):
        train_ws, test_ws = ingest(conf['dataset'], conf['root'], conf)
    paths = cache_paths(conf['out'], conf['dataset'])
    with timed(timings, 'write'):
        for ws, path in zip((train_ws, test_ws), paths):
            write_cache(ws, path)
            logger.info('Wrote %d windows to %s', ws.num_windows, path)
    return {'caches': list(paths), 'windows': [train_ws.num_windows, test_ws.num_windows]}


def cmd_train(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    with timed(timings, 'load'):
        train_ws, test_ws = _read_split(args, conf)
    enc_cfg = config_for(conf['dataset'], conf, in_channels=train_ws.channels)
    train_cfg = TrainConfig.from_config(conf)
    teacher = load_teacher_table(conf.get('teacher'), train_ws.label_names, enc_cfg.embed_dim,
                                 train_cfg.seed)
    logger.info('Training %s: %d epochs, lr=%s, alpha=%s, beta=%s',
                conf['dataset'], train_cfg.epochs, train_cfg.learning_rate,
                train_cfg.alpha, train_cfg.beta)
    with timed(timings, 'train'):
        _, log = train(train_ws, test_ws, teacher, enc_cfg, train_cfg, out_dir=conf['out'])
    logger.info('Best epoch %d with test macro-F1 %.4f', log.best_epoch, log.best_macro_f1)
    return {'best_epoch': log.best_epoch, 'best_macro_f1': log.best_macro_f1}


def cmd_eval(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    params, cfg, header = load_checkpoint(args.checkpoint)
    ws = read_cache(args.cache)
    _check_window_shape(ws, cfg, args.cache)
    with timed(timings, 'encode'):
        logits, embeddings = encode(params, cfg, ws.windows)
    cm = confusion(np.argmax(logits, axis=1), ws.labels, cfg.num_classes, ws.label_names)
    report = metrics(cm)
    seed = header.get('seed', conf['seed'])
    teacher = load_teacher_table(args.teacher or conf.get('teacher'), ws.label_names,
                                 cfg.embed_dim, seed)
    alignment = alignment_accuracy(embeddings, ws.labels, teacher_matrix(teacher, ws.label_names))
    logger.info('Test macro-F1 %.4f, accuracy %.4f, alignment %.4f',
                report.macro_f1, report.accuracy, alignment)
    extra = {
        'dataset_id': ws.dataset_id,
        'checkpoint': os.path.abspath(args.checkpoint),
        'epoch': header.get('epoch'),
        'seed': seed,
        'alignment_accuracy': alignment,
    }
    files = emit_report(report, cm, os.path.join(conf['out'], 'report'), extra)
    return {'report': files, 'macro_f1': report.macro_f1}


def cmd_explain(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    params, cfg, _ = load_checkpoint(args.checkpoint)
    ws = read_cache(args.cache)
    _check_window_shape(ws, cfg, args.cache)
    index = args.window_index
    if not 0 <= index < ws.num_windows:
        raise ConfigError('Window index {} outside 0..{}'.format(index, ws.num_windows - 1))
    saliency = conf['explain']['saliency']
    with timed(timings, 'quantify'):
        activation = quantify_activations(ws.windows[index], params, cfg, ws.channel_groups,
                                          ws.label_names, saliency=saliency, window_index=index)
        same_class = ws.windows[ws.labels == activation.predicted_class]
        baseline = None
        if len(same_class):
            baseline = baseline_activations(same_class, params, cfg, ws.channel_groups,
                                            ws.label_names, activation.predicted_class, saliency)
    manifest = map_cues(activation, CueConstants(base_fps=conf['explain']['base_fps']), baseline)
    out = os.path.join(conf['out'], 'explain_{:05d}'.format(index))
    with timed(timings, 'render'):
        frames = render_frames(manifest, args.base_frames, out)
    logger.info('Explained window %d as %s: %s', index, activation.activity,
                ', '.join('{}={:.3f}'.format(k, v) for k, v in activation.levels.items()))
    return {'frames': len(frames), 'manifest': os.path.join(out, 'manifest.json')}


def _diffuse_train(conf: Dict, timings: Dict[str, float]) -> Dict:
    cfg = DiffusionConfig.from_config(conf, num_classes=len(TWO_MODES))
    sched = schedule(cfg.steps)
    data_rng = make_rng(cfg.seed, 'diffusion/data')
    x, y = make_mixture(MIXTURE_POINTS, TWO_MODES, MIXTURE_STD, data_rng)
    with timed(timings, 'denoiser'):
        denoiser, denoiser_losses = train_denoiser(x, y, sched, cfg)
    with timed(timings, 'classifier'):
        classifier, classifier_losses = train_noisy_classifier(x, y, sched, cfg)

    rng = make_rng(cfg.seed, 'diffusion/evaluate')
    sweep = {t: classifier_accuracy(classifier, x, y, t, sched, cfg, rng)
             for t in sorted({1, max(1, sched.steps // 2), sched.steps})}
    logger.info('Noisy classifier accuracy by step: %s',
                ', '.join('t={} {:.3f}'.format(t, acc) for t, acc in sweep.items()))

    path = os.path.join(conf['out'], 'diffusion.gxdif')
    save_models(path, DiffusionModels(denoiser, classifier), sched, cfg,
                meta={'centers': [list(center) for center in TWO_MODES]})
    losses = os.path.join(conf['out'], 'diffusion_losses.csv')
    pd.DataFrame({'iteration': np.arange(1, cfg.iterations + 1),
                  'denoiser': denoiser_losses,
                  'classifier': classifier_losses}).to_csv(losses, index=False)
    return {'model': path, 'losses': losses,
            'classifier_accuracy': {str(t): acc for t, acc in sweep.items()}}


def _diffuse_sample(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    models, sched, cfg, _ = load_models(args.model)
    count = conf['diffusion']['samples']
    scale = conf['diffusion']['guidance_scale']
    rng = make_rng(conf['seed'], 'diffusion/sample')
    with timed(timings, 'sample'):
        samples = guided_sample(args.label, sched, models.denoiser, models.classifier, scale,
                                count, cfg, rng)
    log_p, _ = classifier_log_prob(models.classifier, samples, np.ones(count, dtype=int),
                                   np.full(count, args.label), cfg)
    logger.info('Label %d at scale %s: sample mean (%.3f, %.3f), mean log f(y|x) %.4f',
                args.label, scale, samples[:, 0].mean(), samples[:, 1].mean(), log_p.mean())
    os.makedirs(conf['out'], exist_ok=True)
    path = os.path.join(conf['out'], 'samples_label{}_s{}.csv'.format(args.label, scale))
    write_samples_csv(path, samples, args.label, scale)
    return {'samples': path, 'mean_log_prob': float(log_p.mean())}


def cmd_diffuse(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    if args.diffuse_command == 'train':
        return _diffuse_train(conf, timings)
    if args.diffuse_command == 'sample':
        return _diffuse_sample(args, conf, timings)
    raise ConfigError('diffuse needs a subcommand: train or sample')


def cmd_verify(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    with timed(timings, 'verify'):
        report = run_suites([args.suite], seed=conf['seed'])
    print(format_report(report))
    os.makedirs(conf['out'], exist_ok=True)
    path = os.path.join(conf['out'], 'verify_report.csv')
    report.to_frame().to_csv(path, index=False)
    return {'passed': report.passed, 'checks': len(report.checks), 'report': path,
            'failures': [check.name for check in report.failures]}


def cmd_baseline(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    train_ws, test_ws = _read_split(args, conf)
    with timed(timings, 'probe'):
        result = train_linear_probe(train_ws, test_ws, seed=conf['seed'])
    files = emit_report(result.report, result.confusion, os.path.join(conf['out'], 'baseline'),
                        {'dataset_id': train_ws.dataset_id, 'model': 'linear_probe',
                         'seed': conf['seed']})
    return {'report': files, 'macro_f1': result.report.macro_f1}


def cmd_combine(args, conf: Dict, timings: Dict[str, float]) -> Dict:
    summaries = {}
    for directory in args.reports:
        summary = load_summary(directory)
        name = summary.get('dataset_id') or os.path.basename(os.path.normpath(directory))
        if summary.get('model'):
            name = '{} ({})'.format(name, summary['model'])
        if name in summaries:
            name = directory
        summaries[name] = summary
    table = combine_reports(summaries)
    print(tabulate(table, headers='keys', showindex=False, floatfmt='.4f'))
    os.makedirs(conf['out'], exist_ok=True)
    path = os.path.join(conf['out'], 'combined.csv')
    table.to_csv(path, index=False)
    return {'table': path}


COMMANDS: Dict[str, Callable] = {
    'ingest': cmd_ingest,
    'train': cmd_train,
    'eval': cmd_eval,
    'explain': cmd_explain,
    'diffuse': cmd_diffuse,
    'verify': cmd_verify,
    'baseline': cmd_baseline,
    'combine': cmd_combine,
}


def run(args) -> Dict:
    """
    Resolves the configuration, runs the selected command and writes its
    run manifest
    :return: command specific result fields
    """
    started = arrow.utcnow()
    conf = resolve_config(args)
    timings: Dict[str, float] = {}
    result = COMMANDS[args.command](args, conf, timings)
    command = args.command
    if command == 'diffuse':
        command = 'diffuse {}'.format(args.diffuse_command)
    write_run_manifest(conf['out'], command, conf, timings, started, result)
    if result.get('passed') is False:
        raise NumericError('{} of {} verification checks failed: {}'.format(
            len(result['failures']), result['checks'], ', '.join(result['failures'])))
    return result


def main(sysargv: Optional[List[str]] = None) -> None:
    """
    Parses the command line, configures logging and maps errors to exit codes
    :return: None
    """
    args = parse_args(sys.argv[1:] if sysargv is None else sysargv)

    # Initialize logger
    logging.basicConfig(
        level=args.loglevel,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    logger.info('Starting gexse %s (loglevel=%s)', __version__,
                logging.getLevelName(args.loglevel))

    try:
        run(args)
    except GexseException as error:
        logger.error('%s', error)
        sys.exit(error.exit_code)


if __name__ == '__main__':
    main()
