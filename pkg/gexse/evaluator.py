"""
Classification metrics, confusion matrices and report files
"""
import json
import logging
import os
from typing import Dict, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix
from tabulate import tabulate

from gexse.misc import DataError, ShapeError

logger = logging.getLogger(__name__)

PER_CLASS_COLUMNS = ['label', 'precision', 'recall', 'f1', 'support']
MACRO_ROW = 'macro'


class ConfusionMatrix(NamedTuple):
    """ counts[i, j]: windows of true class i predicted as class j """
    counts: np.ndarray
    label_names: Tuple[str, ...]

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)


class MetricsReport(NamedTuple):
    per_class: pd.DataFrame
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    zero_support: Tuple[str, ...]


def confusion(preds: Sequence[int], labels: Sequence[int], k: int,
              label_names: Optional[Sequence[str]] = None) -> ConfusionMatrix:
    """
    Counts predictions per (true, predicted) class pair
    :param preds: predicted class indices
    :param labels: true class indices
    :param k: number of classes
    :param label_names: class names, defaults to the indices
    :return: ConfusionMatrix
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape:
        raise ShapeError('{} predictions for {} labels'.format(preds.shape, labels.shape))
    for name, values in (('prediction', preds), ('label', labels)):
        if values.size and (values.min() < 0 or values.max() >= k):
            raise DataError('{} out of range [0, {}): {}'.format(
                name, k, values[(values < 0) | (values >= k)][0]))
    names = tuple(label_names) if label_names is not None else tuple(str(i) for i in range(k))
    if len(names) != k:
        raise ShapeError('{} label names for {} classes'.format(len(names), k))
    if labels.size == 0:
        return ConfusionMatrix(np.zeros((k, k), dtype=np.int64), names)
    counts = confusion_matrix(labels, preds, labels=np.arange(k)).astype(np.int64)
    return ConfusionMatrix(counts, names)


def normalized(cm: ConfusionMatrix) -> np.ndarray:
    """ Row-normalized counts, rows of unseen classes stay zero """
    support = cm.support.astype(np.float64)[:, None]
    return np.divide(cm.counts, support, out=np.zeros(cm.counts.shape), where=support > 0)


def accuracy(cm: ConfusionMatrix) -> float:
    total = cm.counts.sum()
    return float(np.trace(cm.counts) / total) if total else 0.0


def _safe_ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    numerator = numerator.astype(np.float64)
    return np.divide(numerator, denominator, out=np.zeros(numerator.shape),
                     where=denominator > 0)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """
    Per-class precision, recall and F1 with unweighted macro averages.
    Undefined ratios (0/0) count as 0; classes without support are flagged.
    """
    true_positive = np.diag(cm.counts)
    predicted = cm.counts.sum(axis=0)
    support = cm.support
    precision = _safe_ratio(true_positive, predicted)
    recall = _safe_ratio(true_positive, support)
    f1 = _safe_ratio(2.0 * precision * recall, precision + recall)

    zero_support = tuple(name for name, count in zip(cm.label_names, support) if count == 0)
    if zero_support:
        logger.warning('Classes without test windows: %s', ', '.join(zero_support))

    per_class = pd.DataFrame({
        'label': list(cm.label_names),
        'precision': precision,
        'recall': recall,
        'f1': f1,
        'support': support.astype(np.int64),
    }, columns=PER_CLASS_COLUMNS)
    return MetricsReport(
        per_class=per_class,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        accuracy=accuracy(cm),
        zero_support=zero_support,
    )


def macro_f1(preds: Sequence[int], labels: Sequence[int], k: int) -> float:
    return metrics(confusion(preds, labels, k)).macro_f1


def format_report_table(report: MetricsReport) -> str:
    """
    Text table of the per-class metrics with a macro row
    :return: pretty printed table with tabulate as str
    """
    rows = report.per_class.values.tolist()
    rows.append([MACRO_ROW, report.macro_precision, report.macro_recall, report.macro_f1,
                 int(report.per_class['support'].sum())])
    return tabulate(rows, headers=PER_CLASS_COLUMNS, tablefmt='pipe', floatfmt='.4f')


def summary_of(report: MetricsReport, cm: ConfusionMatrix,
               extra: Optional[Mapping] = None) -> Dict:
    summary = {
        'macro_precision': report.macro_precision,
        'macro_recall': report.macro_recall,
        'macro_f1': report.macro_f1,
        'accuracy': report.accuracy,
        'label_names': list(cm.label_names),
        'support': cm.support.tolist(),
        'zero_support': list(report.zero_support),
    }
    summary.update(extra or {})
    return summary


def emit_report(report: MetricsReport, cm: ConfusionMatrix, path: str,
                extra: Optional[Mapping] = None) -> Dict[str, str]:
    """
    Writes per_class.csv (per-class rows then a macro row), summary.json,
    confusion_normalized.csv and confusion_counts.csv into the directory path
    :param extra: additional summary fields, e.g. dataset id and seed
    :return: file kind -> written path
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as error:
        raise DataError('Cannot write report to {}: {}'.format(path, error))
    files = {
        'per_class': os.path.join(path, 'per_class.csv'),
        'summary': os.path.join(path, 'summary.json'),
        'confusion_normalized': os.path.join(path, 'confusion_normalized.csv'),
        'confusion_counts': os.path.join(path, 'confusion_counts.csv'),
    }

    table = report.per_class.copy()
    macro = pd.DataFrame([[MACRO_ROW, report.macro_precision, report.macro_recall,
                           report.macro_f1, int(table['support'].sum())]],
                         columns=PER_CLASS_COLUMNS)
    pd.concat([table, macro], ignore_index=True).to_csv(files['per_class'], index=False)

    with open(files['summary'], 'w') as file:
        json.dump(summary_of(report, cm, extra), file, indent=2)

    labels = list(cm.label_names)
    pd.DataFrame(normalized(cm), index=labels, columns=labels).to_csv(
        files['confusion_normalized'], index_label='true')
    pd.DataFrame(cm.counts, index=labels, columns=labels).to_csv(
        files['confusion_counts'], index_label='true')

    logger.info('\n%s', format_report_table(report))
    logger.info('Report written to %s', path)
    return files


def alignment_accuracy(embeddings: np.ndarray, labels: Sequence[int],
                       targets: np.ndarray) -> float:
    """
    Fraction of windows whose embedding is cosine-closest to the teacher
    vector of its own label
    :param embeddings: (W, N) student embeddings
    :param labels: (W,) true classes
    :param targets: (k, N) teacher vectors
    :return: float in [0, 1]
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or embeddings.shape[1] != targets.shape[1]:
        raise ShapeError('Embeddings {} do not match teacher vectors {}'.format(
            embeddings.shape, targets.shape))
    if len(labels) == 0:
        return 0.0
    unit = embeddings / np.maximum(np.linalg.norm(embeddings, axis=1, keepdims=True), 1e-12)
    unit_targets = targets / np.maximum(np.linalg.norm(targets, axis=1, keepdims=True), 1e-12)
    closest = np.argmax(unit @ unit_targets.T, axis=1)
    return float(np.mean(closest == labels))


def load_summary(path: str) -> Dict:
    """ summary.json of a report directory """
    summary_path = os.path.join(path, 'summary.json')
    try:
        with open(summary_path) as file:
            return json.load(file)
    except (OSError, ValueError) as error:
        raise DataError('Unable to read {}: {}'.format(summary_path, error))


def combine_reports(summaries: Mapping[str, Mapping]) -> pd.DataFrame:
    """
    Cross-dataset table, one row of macro metrics per dataset
    :param summaries: dataset name -> summary dict
    :return: DataFrame with columns dataset, precision, recall, f1
    """
    rows = [[name, summary['macro_precision'], summary['macro_recall'], summary['macro_f1']]
            for name, summary in summaries.items()]
    return pd.DataFrame(rows, columns=['dataset', 'precision', 'recall', 'f1'])
