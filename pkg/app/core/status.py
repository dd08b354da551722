"""
Status code helpers and mappings for SRPL
"""

# Record tags
TAG_ENROLL = 'enroll'
TAG_TEST_TARGET = 'test_target'
TAG_TEST_OUTLIER = 'test_outlier'
TAG_NEGATIVE = 'negative'

RECORD_TAGS = {
    TAG_ENROLL: 'Enrollment',
    TAG_TEST_TARGET: 'Test target',
    TAG_TEST_OUTLIER: 'Test outlier',
    TAG_NEGATIVE: 'Negative'
}

# Training modes
MODE_SRPL = 'srpl'
MODE_SRPL_PLUS = 'srpl_plus'
MODE_SOFTMAX = 'softmax'
MODE_PROTOTYPE = 'prototype'
MODE_COSINE = 'cosine'

TRAIN_MODES = {
    MODE_COSINE: 'CosineDirect',
    MODE_SOFTMAX: 'SoftmaxTune',
    MODE_PROTOTYPE: 'ProtoTypeTune',
    MODE_SRPL: 'SRPL',
    MODE_SRPL_PLUS: 'SRPL+'
}

SRPL_MODES = (MODE_SRPL, MODE_SRPL_PLUS)

# Logit metrics for the reciprocal-point softmax
METRIC_INNER = 'inner'
METRIC_EUCLIDEAN = 'euclidean'

LOGIT_METRICS = {
    METRIC_INNER: 'Inner product',
    METRIC_EUCLIDEAN: 'Squared Euclidean distance'
}

# Radius handling
RADIUS_PER_CLASS = 'per_class'
RADIUS_SHARED = 'shared'
RADIUS_FIXED = 'fixed'

RADIUS_MODES = {
    RADIUS_PER_CLASS: 'Learnable per class',
    RADIUS_SHARED: 'Learnable, shared across classes',
    RADIUS_FIXED: 'Fixed'
}

ADAPTER_INIT_UNIFORM = 'uniform'
ADAPTER_INIT_IDENTITY = 'identity'

ADAPTER_INITS = {
    ADAPTER_INIT_UNIFORM: 'Fan-in scaled uniform',
    ADAPTER_INIT_IDENTITY: 'Identity'
}

# Negative pool sources for SRPL+
NEGATIVES_SYNTHETIC = 'synthetic'
NEGATIVES_REAL = 'real'
NEGATIVES_FILE = 'file'
NEGATIVES_NONE = 'none'

NEGATIVE_SOURCES = {
    NEGATIVES_SYNTHETIC: 'SynNeg',
    NEGATIVES_REAL: 'RealNeg',
    NEGATIVES_FILE: 'FileNeg',
    NEGATIVES_NONE: 'NoNeg'
}

# Ablation variants, in table order. Each variant is (mode, hyperparameter overrides).
VARIANT_SRPL_PLUS = 'srpl_plus'
VARIANT_NO_SYN_CENTERS = 'srpl_plus_no_syn_centers'
VARIANT_SRPL = 'srpl'
VARIANT_NO_CENTER_FOCUS = 'srpl_no_center_focus'
VARIANT_NO_TASK_OPTIMIZE = 'srpl_no_task_optimize'

ABLATION_VARIANTS = {
    VARIANT_SRPL_PLUS: {
        'label': 'SRPL+',
        'mode': MODE_SRPL_PLUS,
        'overrides': {}
    },
    VARIANT_NO_SYN_CENTERS: {
        'label': '  w/o SynCenters',
        'mode': MODE_SRPL_PLUS,
        'overrides': {'syn_centers': False}
    },
    VARIANT_SRPL: {
        'label': 'SRPL',
        'mode': MODE_SRPL,
        'overrides': {}
    },
    VARIANT_NO_CENTER_FOCUS: {
        'label': '  w/o CenterFocus',
        'mode': MODE_SRPL,
        'overrides': {'lambda_c': 0.0}
    },
    VARIANT_NO_TASK_OPTIMIZE: {
        'label': '    w/o SpkTaskOptimize',
        'mode': MODE_SRPL,
        'overrides': {'lambda_c': 0.0, 'logit_metric': METRIC_EUCLIDEAN}
    }
}

# Process exit codes
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def get_mode_label(mode):
    """Return the comparison-table label for a training mode."""
    return TRAIN_MODES.get(mode, mode)


def get_variant_label(variant):
    """Return the ablation-table label for a variant key."""
    entry = ABLATION_VARIANTS.get(variant)
    return entry['label'] if entry else variant


def get_negative_source_label(source):
    """Return the table suffix for a negative pool source."""
    return NEGATIVE_SOURCES.get(source, source)
