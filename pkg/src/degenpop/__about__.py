"""About degenpop."""

from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent

__app_name__ = "degenpop"
__version__ = "0.3.0"
__author__ = "Kajih"
__author_email__ = "itskajih@gmail.com"
__repo_url__ = "https://github.com/Kajiih/degenpop"
__issues_url__ = f"{__repo_url__}/issues"
