"""
Harness package
Run configuration, training loop, evaluation, reports and the command-line protocol
"""

from .run_config import RunConfig, load_run_config
from .trainer import Trainer, TrainingResult, supervision_mask
from .evaluation import EvaluationReport, evaluate_forecaster, evaluate_model, persistence, rollout_rmse
from .reports import (METRICS_COLUMNS, MetricsLog, MetricsRecord, format_table, metrics_rows, read_metrics_csv,
                      write_csv, write_text)
from .gradcheck_suite import run_suite, suite_table
from .commands import (PhaseOutcome, cmd_ablation, cmd_evaluate, cmd_forgetting_report, cmd_gradcheck,
                       cmd_train_incremental, cmd_train_initial, load_data, train_full, train_incremental,
                       train_initial)

__all__ = ['RunConfig', 'load_run_config', 'Trainer', 'TrainingResult', 'supervision_mask', 'EvaluationReport',
           'evaluate_forecaster', 'evaluate_model', 'persistence', 'rollout_rmse', 'METRICS_COLUMNS',
           'MetricsLog', 'MetricsRecord', 'format_table', 'metrics_rows', 'read_metrics_csv', 'write_csv',
           'write_text', 'run_suite', 'suite_table', 'PhaseOutcome', 'cmd_ablation', 'cmd_evaluate',
           'cmd_forgetting_report', 'cmd_gradcheck', 'cmd_train_incremental', 'cmd_train_initial', 'load_data',
           'train_full', 'train_incremental', 'train_initial']
