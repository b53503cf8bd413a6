import sqlite3
import datetime
import logging
from pathlib import Path
from typing import Dict, List, Optional

from logic.constants import RUN_DB_FILE
from logic.errors import DataError

logger = logging.getLogger('database')


def _now() -> str:
    return datetime.datetime.now().isoformat(timespec="seconds")


class RunDatabase:
    """
    训练运行记录

    每个输出目录一个 sqlite 文件，记录运行元数据和逐 epoch 的学习曲线。
    """

    def __init__(self, db_path=None):
        """初始化数据库连接"""
        self.db_path = str(db_path or RUN_DB_FILE)
        self.conn = None
        self.connect()
        self.create_tables()
        self.check_db_version()

    @classmethod
    def for_output_dir(cls, output_dir) -> "RunDatabase":
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        return cls(output_dir / RUN_DB_FILE)

    def connect(self):
        """连接到数据库"""
        try:
            self.conn = sqlite3.connect(self.db_path, timeout=20)
            self.conn.row_factory = sqlite3.Row
        except sqlite3.Error as e:
            logger.error(f"连接数据库失败: {e}")
            raise DataError(f"连接运行记录数据库失败: {e}", "RUN_DB")

    def create_tables(self):
        """创建数据库表"""
        try:
            c = self.conn.cursor()

            # 训练运行表
            c.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    name TEXT NOT NULL,
                    net TEXT NOT NULL,
                    stream TEXT NOT NULL,
                    seed INTEGER NOT NULL,
                    config_digest TEXT NOT NULL,
                    started_at TEXT NOT NULL,
                    finished_at TEXT,
                    status TEXT DEFAULT 'running'
                )
            ''')

            # 学习曲线表
            c.execute('''
                CREATE TABLE IF NOT EXISTS epochs (
                    run_id INTEGER NOT NULL,
                    epoch INTEGER NOT NULL,
                    lr REAL NOT NULL,
                    train_loss REAL NOT NULL,
                    train_top1 REAL NOT NULL,
                    val_top1 REAL,
                    PRIMARY KEY (run_id, epoch)
                )
            ''')

            c.execute('''
                CREATE TABLE IF NOT EXISTS db_version (
                    version INTEGER PRIMARY KEY
                )
            ''')
            c.execute("SELECT count(*) FROM db_version")
            if c.fetchone()[0] == 0:
                c.execute("INSERT INTO db_version VALUES (0)")
            self.conn.commit()
        except sqlite3.Error as e:
            logger.error(f"创建数据库表失败: {e}")
            raise DataError(f"创建运行记录表失败: {e}", "RUN_DB")

    def check_db_version(self):
        """检查数据库版本并执行必要的升级"""
        c = self.conn.cursor()
        c.execute("SELECT version FROM db_version")
        row = c.fetchone()
        current_version = row[0] if row else 0

        upgrades = {
            0: self._upgrade_to_v1,
            1: self._upgrade_to_v2,
        }

        while current_version in upgrades:
            try:
                logger.info(f"正在升级运行记录数据库到版本 {current_version + 1}")
                upgrades[current_version]()
                next_version = current_version + 1
                c.execute("DELETE FROM db_version")
                c.execute("INSERT INTO db_version (version) VALUES (?)", (next_version,))
                self.conn.commit()
                current_version = next_version
            except sqlite3.Error as e:
                logger.error(f"数据库升级SQL错误: 升级到版本 {current_version + 1} 时出错：{e}")
                self.conn.rollback()
                raise DataError(f"升级运行记录数据库失败: {e}", "RUN_DB")

    def _columns(self, table: str) -> List[str]:
        c = self.conn.cursor()
        c.execute(f"PRAGMA table_info({table})")
        return [column[1] for column in c.fetchall()]

    def _upgrade_to_v1(self):
        """升级到版本1：运行表增加最佳epoch、最佳验证精度和stop_loss"""
        columns = self._columns("runs")
        c = self.conn.cursor()
        if 'best_epoch' not in columns:
            c.execute("ALTER TABLE runs ADD COLUMN best_epoch INTEGER")
        if 'best_val_top1' not in columns:
            c.execute("ALTER TABLE runs ADD COLUMN best_val_top1 REAL")
        if 'stop_loss' not in columns:
            c.execute("ALTER TABLE runs ADD COLUMN stop_loss REAL")

    def _upgrade_to_v2(self):
        """升级到版本2：学习曲线记录权重衰减"""
        if 'weight_decay' not in self._columns("epochs"):
            self.conn.cursor().execute("ALTER TABLE epochs ADD COLUMN weight_decay REAL DEFAULT 0")

    def _execute(self, query, params=(), fetchone=False, commit=False):
        if self.conn is None:
            raise DataError("运行记录数据库已关闭", "RUN_DB")
        try:
            c = self.conn.cursor()
            c.execute(query, params)
            if commit:
                self.conn.commit()
            return c.fetchone() if fetchone else c.fetchall()
        except sqlite3.Error as e:
            logger.error(f"执行查询失败: {query}, 错误: {e}")
            if commit:
                self.conn.rollback()
            raise DataError(f"运行记录数据库错误: {e}", "RUN_DB")

    def start_run(self, name: str, net: str, stream: str, seed: int, config_digest: str) -> int:
        """登记一次训练运行，返回运行ID"""
        c = self.conn.cursor()
        try:
            c.execute(
                "INSERT INTO runs (name, net, stream, seed, config_digest, started_at) VALUES (?, ?, ?, ?, ?, ?)",
                (name, net, stream, seed, config_digest, _now()))
            self.conn.commit()
        except sqlite3.Error as e:
            self.conn.rollback()
            raise DataError(f"登记训练运行失败: {e}", "RUN_DB")
        return c.lastrowid

    def add_epoch(self, run_id: int, epoch: int, lr: float, weight_decay: float,
                  train_loss: float, train_top1: float, val_top1: Optional[float] = None):
        """记录一个epoch的学习曲线点"""
        self._execute(
            "REPLACE INTO epochs (run_id, epoch, lr, weight_decay, train_loss, train_top1, val_top1) "
            "VALUES (?, ?, ?, ?, ?, ?, ?)",
            (run_id, epoch, lr, weight_decay, train_loss, train_top1, val_top1), commit=True)

    def finish_run(self, run_id: int, status: str, best_epoch: Optional[int] = None,
                   best_val_top1: Optional[float] = None, stop_loss: Optional[float] = None):
        self._execute(
            "UPDATE runs SET finished_at = ?, status = ?, best_epoch = ?, best_val_top1 = ?, stop_loss = ? "
            "WHERE id = ?",
            (_now(), status, best_epoch, best_val_top1, stop_loss, run_id), commit=True)

    def get_run(self, run_id: int) -> Optional[Dict]:
        row = self._execute("SELECT * FROM runs WHERE id = ?", (run_id,), fetchone=True)
        return dict(row) if row else None

    def get_curve(self, run_id: int) -> List[Dict]:
        """按epoch顺序返回学习曲线"""
        rows = self._execute("SELECT * FROM epochs WHERE run_id = ? ORDER BY epoch", (run_id,))
        return [dict(r) for r in rows]

    def close(self):
        """关闭数据库连接"""
        if self.conn:
            try:
                self.conn.commit()
            except sqlite3.Error:
                pass
            self.conn.close()
            self.conn = None
            logger.debug("运行记录数据库已关闭")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
