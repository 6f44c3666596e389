import json
import logging
import sqlite3

logger = logging.getLogger(__name__)


def create_database(db_file="results.db"):
    """
    Create the run cache if it doesn't exist.

    Args:
        db_file (str): Path to the SQLite database file
    """
    conn = sqlite3.connect(db_file)
    cursor = conn.cursor()
    cursor.execute(
        """
        CREATE TABLE IF NOT EXISTS runs (
            config_hash TEXT NOT NULL,
            dispatcher TEXT NOT NULL,
            seed INTEGER NOT NULL,
            run_id TEXT NOT NULL,
            record TEXT NOT NULL,
            timestamp DATETIME DEFAULT CURRENT_TIMESTAMP,
            PRIMARY KEY (config_hash, dispatcher, seed)
        )
        """
    )
    conn.commit()
    conn.close()


class ResultCache:
    """
    SQLite cache of finished RunRecords keyed by (config hash, dispatcher, seed).
    """
    def __init__(self, db_file="results.db"):
        self.db_file = db_file
        create_database(db_file)
        self.conn = sqlite3.connect(db_file)
        self.cursor = self.conn.cursor()

    def lookup(self, digest, dispatcher, seed):
        """
        Returns:
            dict: The cached record, or None
        """
        self.cursor.execute(
            "SELECT record FROM runs WHERE config_hash = ? AND dispatcher = ? AND seed = ?",
            (digest, dispatcher, int(seed)),
        )
        row = self.cursor.fetchone()
        return json.loads(row[0]) if row else None

    def store(self, record):
        """
        Args:
            record (dict): RunRecord.to_dict() output
        """
        try:
            self.cursor.execute(
                "INSERT OR REPLACE INTO runs (config_hash, dispatcher, seed, run_id, record) VALUES (?, ?, ?, ?, ?)",
                (record['config_hash'], record['dispatcher'], int(record['seed']), record['run_id'],
                 json.dumps(record, sort_keys=True)),
            )
            self.conn.commit()
        except sqlite3.Error as e:
            logger.warning("could not cache run %s: %s", record.get('run_id'), e)

    def records(self):
        self.cursor.execute("SELECT record FROM runs ORDER BY config_hash, dispatcher, seed")
        return [json.loads(row[0]) for row in self.cursor.fetchall()]

    def __len__(self):
        self.cursor.execute("SELECT COUNT(*) FROM runs")
        return self.cursor.fetchone()[0]

    def close(self):
        self.conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
