#!/usr/bin/env python3
"""
コマンドラインランチャー
仮想環境のPythonで agalign CLI を起動
"""
import subprocess
import sys
from pathlib import Path


def main():
    # スクリプトのディレクトリを取得
    script_dir = Path(__file__).parent.absolute()

    # 仮想環境のPythonパスを取得
    if sys.platform == "darwin" or sys.platform == "linux":
        python_path = script_dir / "venv" / "bin" / "python"
    else:  # Windows
        python_path = script_dir / "venv" / "Scripts" / "python.exe"

    # 仮想環境が存在しない場合はシステムのPythonを使用
    if not python_path.exists():
        python_path = sys.executable

    try:
        process = subprocess.run(
            [str(python_path), "-m", "app.cli", *sys.argv[1:]],
            cwd=str(script_dir),
        )
        return process.returncode
    except KeyboardInterrupt:
        print("\n🛑 中断しました", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
