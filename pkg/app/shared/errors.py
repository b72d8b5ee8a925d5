"""
例外クラス定義
"""


class AlignmentError(Exception):
    """パッケージ共通の基底例外"""


class ParameterError(AlignmentError, ValueError):
    """モデル・アルゴリズムのパラメータが範囲外"""


class PairFormatError(AlignmentError):
    """ペアファイルやJSON成果物の形式エラー"""


class InfeasibleAssignmentError(AlignmentError):
    """有限重みの完全マッチングが存在しない"""


class GuardrailError(AlignmentError):
    """総当たりオラクルのサイズ上限を超過"""
