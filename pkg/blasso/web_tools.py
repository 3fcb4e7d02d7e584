import os
import requests

from .base import ensure_output_dir

DIABETES_URL = "https://web.stanford.edu/~hastie/Papers/LARS/diabetes.data"


def download_diabetes(dest="data/diabetes.tsv", url=DIABETES_URL, timeout=15):
    """Fetch the tab-separated LARS diabetes table (442 rows, 10 regressors and Y)."""
    try:
        response = requests.get(url, timeout=timeout)
        response.raise_for_status()
        text = response.text
        header = text.splitlines()[0].split("\t") if text else []
        if "Y" not in [h.strip() for h in header]:
            return {"error": f"Unexpected content from {url}: no 'Y' column in header"}
        ensure_output_dir(os.path.dirname(dest) or ".")
        with open(dest, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        return {"success": True, "file_path": dest, "rows": len(text.strip().splitlines()) - 1}
    except Exception as e:
        return {"error": str(e)}
