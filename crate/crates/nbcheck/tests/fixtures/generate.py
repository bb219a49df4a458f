"""Regenerates the fixture notebooks.

Saved outputs come from one reference run through jupyter_client, then a
few are replaced with stale values on purpose. Run from this directory:

    python3 generate.py
"""

import base64
import json
import struct
import zlib

from jupyter_client.manager import start_new_kernel


def png(pixels):
    """Encodes rows of RGB tuples as a PNG."""
    height, width = len(pixels), len(pixels[0])
    raw = b"".join(b"\x00" + b"".join(bytes(p) for p in row) for row in pixels)

    def chunk(kind, data):
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body))

    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + chunk(b"IHDR", header)
        + chunk(b"IDAT", zlib.compress(raw))
        + chunk(b"IEND", b"")
    )


RED = (255, 0, 0)
BLUE = (0, 0, 255)
IMAGE = png([[RED, RED], [RED, RED]])
IMAGE_ONE_PIXEL_OFF = png([[RED, RED], [RED, BLUE]])


def run(sources):
    km, kc = start_new_kernel(kernel_name="python3")
    try:
        results = []
        for source in sources:
            msg_id = kc.execute(source, allow_stdin=False)
            outputs = []
            while True:
                msg = kc.get_iopub_msg(timeout=30)
                if msg["parent_header"].get("msg_id") != msg_id:
                    continue
                kind, content = msg["msg_type"], msg["content"]
                if kind == "status" and content["execution_state"] == "idle":
                    break
                if kind == "stream":
                    if outputs and outputs[-1]["output_type"] == "stream" and outputs[-1]["name"] == content["name"]:
                        outputs[-1]["text"] += content["text"]
                    else:
                        outputs.append({"output_type": "stream", "name": content["name"], "text": content["text"]})
                elif kind == "execute_result":
                    outputs.append({"output_type": "execute_result", "data": content["data"],
                                    "metadata": content.get("metadata", {}),
                                    "execution_count": content["execution_count"]})
                elif kind == "display_data":
                    outputs.append({"output_type": "display_data", "data": content["data"],
                                    "metadata": content.get("metadata", {})})
                elif kind == "error":
                    outputs.append({"output_type": "error", "ename": content["ename"],
                                    "evalue": content["evalue"], "traceback": content["traceback"]})
            kc.get_shell_msg(timeout=30)
            results.append(outputs)
        return results
    finally:
        kc.stop_channels()
        km.shutdown_kernel(now=True)


def lines(text):
    return text.splitlines(keepends=True)


def notebook(cells):
    code = [c for c in cells if c["cell_type"] == "code"]
    for n, (cell, outputs) in enumerate(zip(code, run([c["_src"] for c in code])), start=1):
        cell["outputs"] = outputs
        cell["execution_count"] = n
        for out in outputs:
            if out["output_type"] == "execute_result":
                out["execution_count"] = n
    for i, cell in enumerate(cells):
        cell["id"] = f"cell-{i}"
        cell["source"] = lines(cell.pop("_src"))
        for out in cell.get("outputs", []):
            if "text" in out:
                out["text"] = lines(out["text"])
            for key, value in out.get("data", {}).items():
                if key.startswith("text/"):
                    out["data"][key] = lines(value)
    return {
        "cells": cells,
        "metadata": {
            "kernelspec": {"display_name": "Python 3", "language": "python", "name": "python3"},
            "language_info": {"name": "python"},
        },
        "nbformat": 4,
        "nbformat_minor": 5,
    }


def code(source, tags=()):
    meta = {"tags": list(tags)} if tags else {}
    return {"cell_type": "code", "metadata": meta, "_src": source, "outputs": [], "execution_count": None}


def markdown(source):
    return {"cell_type": "markdown", "metadata": {}, "_src": source}


def save(name, doc):
    with open(name, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, ensure_ascii=False)
        f.write("\n")


def stale(cell, text):
    cell["outputs"] = [{"output_type": "stream", "name": "stdout", "text": lines(text)}]


def deterministic():
    return notebook([
        markdown("# Arithmetic, printing and strings"),
        code("1 + 1"),
        code("print('Hello World')"),
        code("x = 6 * 7\nx"),
        code("def add(a, b):\n    return a + b\n\nadd(40, 2)"),
        code("s = 'notebook'\ns.upper()"),
        markdown("State carries over between cells."),
        code("words = s.split('o')\nwords"),
        code("for i in range(3):\n    print(i, i ** 2)"),
        code("'-'.join(reversed(words))"),
        code("round(10 / 3, 4)"),
        code("len(s), s[::-1], f'{x:05d}'"),
    ])


def timestamp():
    doc = notebook([
        code("import time"),
        code("time.asctime()"),
        code("print('unaffected')"),
    ])
    doc["cells"][1]["outputs"][0]["data"]["text/plain"] = ["'Thu Dec 12 18:02:28 2019'"]
    return doc


def markers():
    doc = notebook([
        code("print('fresh')", tags=["nbval-check-output"]),
        code("# NBVAL_CHECK_OUTPUT\nprint(2 + 2)"),
        code("print('now')", tags=["nbval-ignore-output"]),
        code("# NBVAL_IGNORE_OUTPUT\nprint('now')"),
        code("print('not skipped')", tags=["nbval-skip"]),
        code("# NBVAL_SKIP\nprint('not skipped')"),
        code("1 / 0", tags=["raises-exception"]),
        code("print('fresh')"),
    ])
    cells = doc["cells"]
    stale(cells[0], "stale\n")
    stale(cells[2], "then\n")
    stale(cells[3], "then\n")
    # never run, so if they were they would fail
    cells[4]["source"] = lines("raise RuntimeError('skipped cells must not run')")
    cells[5]["source"] = lines("# NBVAL_SKIP\nraise RuntimeError('skipped cells must not run')")
    stale(cells[7], "stale\n")
    return doc


def image(saved_png):
    source = (
        "import base64\n"
        "from IPython.display import Image\n"
        f"Image(data=base64.b64decode('{base64.b64encode(IMAGE).decode()}'))"
    )
    doc = notebook([code(source)])
    data = doc["cells"][0]["outputs"][0]["data"]
    assert data["image/png"] == base64.b64encode(IMAGE).decode()
    data["image/png"] = base64.b64encode(saved_png).decode()
    return doc


if __name__ == "__main__":
    save("deterministic.ipynb", deterministic())
    save("timestamp.ipynb", timestamp())
    save("markers.ipynb", markers())
    save("image_same.ipynb", image(IMAGE))
    save("image_one_pixel_off.ipynb", image(IMAGE_ONE_PIXEL_OFF))
