#!/usr/bin/env python3
"""
Plots a row-normalized confusion matrix written by `gexse eval` and,
optionally, a diffusion sample CSV written by `gexse diffuse sample`

    scripts/plot_report.py out/report/confusion_normalized.csv [out/samples_label0_s2.0.csv]
"""
import sys

import matplotlib  # Install PYQT5 manually if you want to test this helper function
matplotlib.use("Qt5Agg")
import matplotlib.pyplot as plt
import pandas as pd


def plot_confusion(ax, path: str) -> None:
    """
    Draws the normalized confusion matrix as a heat map
    :param ax: matplotlib axes
    :param path: confusion_normalized.csv with a `true` index column
    :return: None
    """
    frame = pd.read_csv(path, index_col='true')
    image = ax.imshow(frame.values, vmin=0.0, vmax=1.0, cmap='Blues')
    ax.set_xticks(range(len(frame.columns)))
    ax.set_xticklabels(frame.columns, rotation=90)
    ax.set_yticks(range(len(frame.index)))
    ax.set_yticklabels(frame.index)
    ax.set_xlabel('predicted')
    ax.set_ylabel('true')
    for row in range(frame.shape[0]):
        for col in range(frame.shape[1]):
            value = frame.values[row, col]
            if value >= 0.01:
                ax.text(col, row, '{:.2f}'.format(value), ha='center', va='center', fontsize=7,
                        color='white' if value > 0.5 else 'black')
    plt.colorbar(image, ax=ax)


def plot_samples(ax, path: str) -> None:
    frame = pd.read_csv(path)
    label, scale = frame['label'].iloc[0], frame['guidance_scale'].iloc[0]
    ax.scatter(frame['x'], frame['y'], s=4, alpha=0.6)
    ax.set_title('label {} at guidance scale {}'.format(label, scale))
    ax.set_aspect('equal')


def plot_report(confusion_path: str, samples_path: str = None) -> None:
    fig, axes = plt.subplots(1, 2 if samples_path else 1, squeeze=False,
                             figsize=(12 if samples_path else 7, 6))
    plot_confusion(axes[0][0], confusion_path)
    if samples_path:
        plot_samples(axes[0][1], samples_path)
    fig.tight_layout()
    plt.show()


if __name__ == '__main__':
    plot_report(*sys.argv[1:3])
