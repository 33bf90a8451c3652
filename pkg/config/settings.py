# Configuration settings for the VA-MoE incremental forecasting system
# Desk-scale defaults; every value can be overridden from a run config file

# ===== Variable Catalog =====
# Upper-air variable types (initial phase) and the full pressure-level set (hPa)
UPPER_AIR_VARIABLES = ["Z", "Q", "U", "V", "T"]
PRESSURE_LEVELS = [50, 100, 150, 200, 250, 300, 400, 500, 600, 700, 850, 925, 1000]
UPPER_AIR_LEVELS = 3               # Levels per upper-air type at desk scale (13 at full scale)

# Surface variables (incremental phase)
SURFACE_VARIABLES = ["u10", "v10", "t2m", "msl", "sp"]
SURFACE_GROUPING = "single"        # "single": one SV group; "per_variable": one group per variable

# ===== Grid =====
GRID_HEIGHT = 32
GRID_WIDTH = 64

# ===== Model Architecture =====
ARCHITECTURE = "vamoe"             # Available: vamoe, vit, vit_moe
AVAILABLE_ARCHITECTURES = ["vamoe", "vit", "vit_moe"]
LATENT_WIDTH = 64                  # C
ATTENTION_HEADS = 4                # h
DEPTH = 2                          # Transformer blocks
TOP_K = 0                          # K; 0 means LATENT_WIDTH // 4
PATCH_SIZE = 4                     # p, encoder stride
MOE_EXPERTS = 8                    # vit_moe only: dense experts per block
MOE_TOP_K = 2                      # vit_moe only: experts per token
INIT_STD = 0.02                    # Truncated-normal std for weights

# ===== Objective =====
RECON_LAMBDA = 0.1                 # lambda weighting the reconstruction term
LAYER_NORM_EPS = 1e-5

# ===== Optimizer (AdamW) =====
LR_INITIAL = 0.0002
LR_INCREMENTAL = 0.00005
WEIGHT_DECAY = 0.01
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP = 1.0                    # Global-norm clip; 0 disables

# ===== Schedule =====
INITIAL_EPOCHS = 30
INCREMENTAL_EPOCHS = 30
FULL_RETRAIN_EPOCHS = 30
BATCH_SIZE = 8
EVAL_EVERY = 10                    # Evaluate every N epochs (and after the last one)
LEAD_TIMES = [1, 3, 5]             # Model steps (desk-scale analog of 6h / 72h / 120h)
OVERFIT_SAMPLES = 0                # >0 switches train-initial into overfit mode
OVERFIT_STEPS = 500

# ===== Incremental Phase =====
REINIT_INDEX_PROJECTOR = True      # False keeps the old projector rows (warm start)
FREEZE_DECODER_OLD = True          # Freeze the pretrained decoder output slice
OLD_CHANNEL_FRACTION = 1.0         # Share of old channels supervised in the incremental phase

# ===== Synthetic Data =====
INITIAL_PAIRS = 2000
INCREMENTAL_PAIRS = 1000
TEST_PAIRS = 200
TEST_GAP = 50                      # Frames skipped between training window and test split
SPIN_UP_STEPS = 200                # Steps discarded before the first stored frame
TIME_STEP = 1.0
MAX_ADVECTION_CFL = 1.0            # |u| * dt in grid cells per step
MAX_DIFFUSION_NUMBER = 0.25        # kappa * dt for the explicit 5-point Laplacian

# ===== Evaluation =====
LATITUDE_WEIGHTED = False
EVAL_WORKERS = 1
EVAL_BATCH_SIZE = 16

# ===== Experiments =====
FORGETTING_SEEDS = 3
GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_MODEL_TOLERANCE = 1e-3
GRADCHECK_GRID = (8, 16)           # End-to-end check runs on a reduced model
GRADCHECK_WIDTH = 16
GRADCHECK_DEPTH = 1

# ===== Files =====
CHECKPOINT_MAGIC = b"VAMO"
CHECKPOINT_VERSION = 1
DATASET_MAGIC = b"VAMG"
DATASET_VERSION = 1
DEFAULT_OUTPUT_DIR = "runs"
LOG_LEVEL = "INFO"
