"""
Figures of chain quality and censorship resilience against alpha.
"""
import logging
import traceback

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import seaborn as sns

logger = logging.getLogger(__name__)

METRIC_TITLES = {'quality': 'Chain quality', 'censorship': 'Censorship resilience'}


def render_sweep(df, file_path):
    """
    One panel per metric, one line per protocol, with the ideal baseline
    (1 - alpha for quality, 1 for censorship) dashed.
    """
    try:
        df = pd.DataFrame(df).dropna(subset=['value'])
        metrics = [m for m in ('quality', 'censorship') if m in set(df['metric'])]
        if not metrics:
            raise ValueError("Sweep table has no quality or censorship rows")

        sns.set_theme(style='whitegrid')
        fig, axes = plt.subplots(1, len(metrics), figsize=(6 * len(metrics), 4.5), squeeze=False)
        alphas = np.linspace(df['alpha'].min(), df['alpha'].max(), 50)
        for ax, metric in zip(axes[0], metrics):
            subset = df[df['metric'] == metric]
            sns.lineplot(data=subset, x='alpha', y='value', hue='protocol', style='protocol',
                         markers=True, dashes=False, ax=ax)
            baseline = 1.0 - alphas if metric == 'quality' else np.ones_like(alphas)
            ax.plot(alphas, baseline, linestyle='--', color='grey', label='ideal')
            ax.set_title(METRIC_TITLES[metric])
            ax.set_xlabel('alpha')
            ax.set_ylabel(metric)
            ax.legend()
        fig.tight_layout()
        fig.savefig(file_path)
        plt.close(fig)
        logger.info(f"Rendered {len(metrics)} panels to {file_path}")
        return file_path
    except Exception as e:
        logger.error(f"Error rendering figure {file_path}: {str(e)}")
        logger.error(traceback.format_exc())
        raise
