import os
import sys
import logging
from dotenv import load_dotenv

logger = logging.getLogger('setup')


def find_app_path():
    """获取程序运行路径"""
    app_path = os.path.dirname(os.path.abspath(__file__))
    # 如果是在logic目录中，需要回到上层目录
    if os.path.basename(app_path) == 'logic':
        app_path = os.path.dirname(app_path)
    return app_path


def check_dependencies():
    """检查必要的依赖是否已安装"""
    required_modules = ["numpy", "torch", "psutil", "markdown"]
    missing_modules = []

    for module in required_modules:
        try:
            __import__(module)
        except ImportError:
            missing_modules.append(module)

    if missing_modules:
        logger.error("以下模块缺失，程序可能无法正常运行: " + ", ".join(missing_modules))
        logger.error("请使用pip安装缺失的模块: pip install -r requirements.txt")
        return False

    return True


def configure_threads():
    """按物理核心数设置torch线程数，返回使用的线程数"""
    import psutil
    import torch

    requested = os.getenv('SAMSLR_THREADS')
    if requested:
        threads = max(1, int(requested))
    else:
        threads = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    torch.set_num_threads(threads)

    memory = psutil.virtual_memory()
    logger.info(f"torch线程数: {threads}, 可用内存: {memory.available / 2 ** 30:.1f} GiB")
    return threads


def initialize_app():
    """初始化应用程序环境"""
    # 加载环境变量（.env 位于项目根目录或当前目录）
    env_path = os.path.join(find_app_path(), '.env')
    if os.path.exists(env_path):
        load_dotenv(env_path)
    else:
        load_dotenv()

    if not check_dependencies():
        return False

    configure_threads()
    logger.debug(f"Python {sys.version.split()[0]}")
    return True
