import os
from enum import Enum

VERSION = '0.3'

# Numeric tolerances
CPT_ROW_TOLERANCE = 1e-9
CPT_NORMALIZE_TOLERANCE = 1e-6  # rows off by more than this are rejected, not normalized
INFLUENCE_TOLERANCE = 1e-9
EXACT_ENUMERATION_LIMIT = 2 ** 24  # max joint states for exact marginals
MAX_EXHAUSTIVE_VARIABLES = 5
MAX_GRAPH_VARIABLES = 50

# Defaults for simulation, detection and scoring
DEFAULT_ALPHA = 0.01
DEFAULT_DELTA = 0.1
MAX_DELTA = 0.5
DEFAULT_N = 500
DEFAULT_K = 2
DEFAULT_RUNS = 5
DEFAULT_SEED = 0
DEFAULT_ESS = 1.0
DEFAULT_MAX_CONDITIONING = 3
INFLUENTIAL_DRAW_ATTEMPTS = 50

# Files and folders
NETWORK_DEFINITION_FOLDER = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'networks')
BENCHMARK_NETWORK_PATH = os.path.join(NETWORK_DEFINITION_FOLDER, 'benchmark10.net')
CHANGES_EXAMPLE_NETWORK_PATH = os.path.join(NETWORK_DEFINITION_FOLDER, 'changes_example.net')
# Shipped networks keep every parent's effect on the first-state probability at least this large
MIN_LINK_CONTRAST = 0.35
BASE_DATA_DIR = os.path.join(os.path.expanduser('~'), 'changecause')
SETTINGS_FILE_PATH = os.path.join(BASE_DATA_DIR, 'settings.json')
MANIFEST_FILE_NAME = 'manifest.json'
SCENARIO_FILE_NAME = 'scenario.json'
DATASET_FILE_PATTERN = 'dataset_{index}.csv'

SETTINGS_KEYS = ('alpha', 'delta', 'n', 'k', 'runs', 'seed', 'ess', 'max_conditioning')

# Experiments
EXPERIMENT_KINDS = ('type-errors', 'og-claims', 'calibration')
GRID_KEYS = ('k', 'delta', 'alpha', 'n')  # settings that may list several values, swept in this order
DEFAULT_CALIBRATION_PAIRS = 2000
# Leading columns of a report row, as (column, RunConfig field)
REPORT_CONFIG_COLUMNS = {
    'type-errors': (('δ', 'delta'), ('α', 'alpha'), ('N', 'n')),
    'og-claims': (('k', 'k'), ('δ', 'delta'), ('α', 'alpha'), ('N', 'n')),
    'calibration': (('α', 'alpha'), ('N', 'n')),
}


class Verdict(Enum):
    CHANGE = 'change'
    NO_CHANGE = 'no-change'


class RelationKind(Enum):
    LESS = '<'
    NDP = 'NDP'
    UNKNOWN = 'unknown'


class RelationStrength(Enum):
    ORDINARY = 'ordinary'
    FOCAL_DESCENDANT = 'focal-descendant'


class EdgeStyle(Enum):
    DIRECTED = 'directed'
    DIRECTED_MARKED = 'directed-marked'
    UNDIRECTED = 'undirected'


class ClaimKind(Enum):
    ORDER = 'ORDER'
    NDP = 'NDP'
    EDGE = 'EDGE'
    PATH = 'PATH'
    UNKNOWN = 'UNKNOWN'
