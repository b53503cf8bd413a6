"""
错误类型

所有被拒绝的输入都抛出 SamSlrError 的子类，tag 是稳定的大写标识，
命令行在失败时输出一行 `error:<TAG>: <message>`。
"""


class SamSlrError(ValueError):
    """带机器可读标签的错误基类"""

    default_tag = "SAMSLR_ERROR"

    def __init__(self, message: str, tag: str = None):
        super().__init__(message)
        self.message = message
        self.tag = tag or self.default_tag

    def one_line(self) -> str:
        """命令行输出用的单行格式"""
        text = " ".join(str(self.message).split())
        return f"error:{self.tag}: {text}"


class GraphError(SamSlrError):
    default_tag = "GRAPH_INVALID"


class StreamError(SamSlrError):
    default_tag = "STREAM_INVALID"


class ModelError(SamSlrError):
    default_tag = "MODEL_INVALID"


class LossError(SamSlrError):
    default_tag = "LOSS_INVALID"


class EnsembleError(SamSlrError):
    default_tag = "ENSEMBLE_INVALID"


class DataError(SamSlrError):
    default_tag = "DATA_INVALID"


class ConfigError(SamSlrError):
    default_tag = "CONFIG_INVALID"


class CheckpointError(SamSlrError):
    default_tag = "CHECKPOINT_INVALID"


class TrainingError(SamSlrError):
    default_tag = "TRAINING_FAILED"
