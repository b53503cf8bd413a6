import os
import math

# 应用名称
APP_NAME = "samslr"

# 默认图文件目录
LAYOUT_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "layouts")
WHOLEBODY_LAYOUT_FILE = os.path.join(LAYOUT_DIR, "wholebody_133.txt")
SLR_SELECTION_FILE = os.getenv('SAMSLR_SELECTION', os.path.join(LAYOUT_DIR, "slr_27.txt"))

# 日志与运行记录
EVENT_LOG_FILE = os.getenv('SAMSLR_EVENT_LOG', "training_events.log")
APP_LOG_FILE = os.getenv('SAMSLR_APP_LOG', "samslr.log")
RUN_DB_FILE = "runs.db"

# 关键点数据
FULL_NODE_COUNT = 133
SLR_NODE_COUNT = 27
FRAME_WIDTH = int(os.getenv('SAMSLR_FRAME_WIDTH', 512))
FRAME_HEIGHT = int(os.getenv('SAMSLR_FRAME_HEIGHT', 512))
SAMPLE_LENGTH = 150  # 不足150帧时重复视频

# 数据增强幅度
MIRROR_PROB = 0.5
ROTATION_RANGE = math.radians(13.0)
SCALE_RANGE = (0.9, 1.1)
JITTER_STD = 0.01
SHIFT_RANGE = 0.1

# SL-GCN 结构
SLGCN_CHANNELS = (64, 64, 64, 64, 128, 128, 128, 256, 256, 256)
SLGCN_STRIDES = (1, 1, 1, 1, 2, 1, 1, 2, 1, 1)
SLGCN_GROUPS = 8
TEMPORAL_KERNEL = 9
DROPGRAPH_KEEP_PROB = 0.95
DROPGRAPH_BLOCK_HOPS = 1
DROPGRAPH_FIRST_BLOCK = 6  # 从第6个block开始启用DropGraph（1起计数）

# SSTCN 结构
SSTCN_FRAMES = 60
SSTCN_KEYPOINTS = 33
SSTCN_FEATURE_SIZE = 24
SSTCN_DROPOUT = 0.1

# 损失函数
LABEL_SMOOTHING = 0.1

# 训练计划（SSTCN的训练计划，SL-GCN默认沿用）
INITIAL_LR = 1e-3
INITIAL_WEIGHT_DECAY = 1e-4
LR_MILESTONES = ((50, 1e-4, 0.0), (100, 1e-5, 0.0))  # (epoch, lr, weight_decay)
TOTAL_EPOCHS = 200
BATCH_SIZE = 32
MOMENTUM = 0.9
FINETUNE_EPOCH_CAP = 50

# 融合权重
STREAMS = ("joint", "bone", "joint_motion", "bone_motion")
RGB_TRACK_WEIGHTS = (("skeleton", 1.0), ("rgb", 0.9), ("flow", 0.4), ("feature", 0.4))
RGBD_TRACK_WEIGHTS = (
    ("skeleton", 1.0), ("rgb", 0.9), ("flow", 0.4),
    ("feature", 0.4), ("hha", 0.4), ("depth_flow", 0.1),
)
TUNE_GRID = tuple(round(0.1 * i, 1) for i in range(11))
TUNE_MAX_COMBINATIONS = 10 ** 6
TUNE_BEAM_WIDTH = 32

# 随机种子
DEFAULT_SEED = int(os.getenv('SAMSLR_SEED', 1))

# 测试模式配置
TEST_MODE = os.getenv('SAMSLR_TEST_MODE', 'false').lower() == 'true'

# 测试模式下的配置覆盖
if TEST_MODE:
    # 测试时事件日志写入独立文件
    EVENT_LOG_FILE = os.getenv('SAMSLR_EVENT_LOG', "test_training_events.log")
    RUN_DB_FILE = "test_runs.db"
