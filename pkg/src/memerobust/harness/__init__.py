"""Evaluation grids, single-channel suites, augmentation and reports."""
from .augment import gen_aug_dataset
from .core import (GRID_CELLS, Artifacts, HarnessConfig, HarnessError, NoiseSpec, condition_name, derive_seed,
                   evaluate, make_spec, perturb_sample, prepare_artifacts, run_grid, run_single_channel_suite,
                   splitmix64)
from .remote import (EndpointConfig, RemoteAuthError, RemoteError, RemoteResponseError, RemoteTransportError,
                     remote_evaluate, remote_predict)
from .report import (GridReport, SuiteReport, SuiteTable, dump_json, grid_from_csv, load_json, make_report)
