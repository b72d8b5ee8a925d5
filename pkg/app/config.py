"""
設定ファイル
"""
import os
from dotenv import load_dotenv

# .envファイルを読み込む（ローカル環境用）
load_dotenv()

# ログ設定
LOG_LEVEL = os.getenv("AGALIGN_LOG_LEVEL", "INFO")
TIMEZONE = os.getenv("AGALIGN_TIMEZONE", "Asia/Tokyo")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# 乱数生成器
RNG_NAME = "numpy.PCG64"
RNG_VERSION = 1

# ペアファイル形式
PAIR_FORMAT_HEADER = "AGPAIR v1"
PAIR_SECTIONS = ["g1.uu", "g1.ua", "g2.uu", "g2.ua"]
PAIR_SECTION_END = "end"

# 部分木カウント設定
DEFAULT_C = float(os.getenv("AGALIGN_DEFAULT_C", "0.5"))
SUBSET_CHUNK_SIZE = int(os.getenv("AGALIGN_SUBSET_CHUNK", "2048"))
BRUTEFORCE_MAX_N = 12
BRUTEFORCE_MAX_K = 4

# 精緻化設定
ROOT_SOLVER_TOLERANCE = 1e-12
REGIMES = ["auto", "sparse", "rich"]
# しきい値の目標値 f(γ) = 係数·log n / (…) の係数（ユーザ側・属性側）
DEFAULT_USER_LOG_FACTOR = float(os.getenv("AGALIGN_USER_LOG_FACTOR", "3.0"))
DEFAULT_ATTR_LOG_FACTOR = float(os.getenv("AGALIGN_ATTR_LOG_FACTOR", "3.0"))

# 実験設定
DEFAULT_EPSILON = float(os.getenv("AGALIGN_DEFAULT_EPSILON", "0.1"))
DEFAULT_JOBS = int(os.getenv("AGALIGN_JOBS", "1"))
RESULTS_DIR = os.getenv("AGALIGN_RESULTS_DIR", "results")
PIPELINE_MODES = ["counting-only", "counting+sparse", "counting+rich", "bipartite-map", "auto"]
RESULTS_SCHEMA_VERSION = 2
RESULTS_COLUMNS = [
    "schema", "row_type", "cell", "trial",
    "n", "m", "q_u", "rho_u", "q_a", "rho_a",
    "k", "c", "mode", "regime", "seed",
    "precision", "coverage", "accuracy", "exact", "conditions",
    "time_counting", "time_refinement", "time_bipartite",
]

# 統計的検証
SE_BAND = 4.0
