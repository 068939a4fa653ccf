"""Builds the neutral-face landmark fixture and the retargeting goldens.

Independent scalar arithmetic: group means, per-region maps about the
region centroid, then the global similarity about its center.
"""
import json
import math
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent
LM = ROOT / "data" / "landmarks"
GOLD = ROOT / "data" / "golden"

MERGE = [
    (0, [0, 1, 2], "jaw, image-left upper"), (1, [4, 5, 6], "jaw, image-left lower"),
    (2, [7, 8, 9], "chin"), (3, [10, 11, 12], "jaw, image-right lower"),
    (4, [14, 15, 16], "jaw, image-right upper"),
    (5, [17, 18], "left brow outer"), (6, [19], "left brow peak"), (7, [20, 21], "left brow inner"),
    (8, [22, 23], "right brow inner"), (9, [24], "right brow peak"), (10, [25, 26], "right brow outer"),
    (11, [30, 33], "nose"),
    (12, [36], "left eye outer corner"), (13, [37, 38], "left eye upper lid"),
    (14, [39], "left eye inner corner"), (15, [40, 41], "left eye lower lid"),
    (16, [42], "right eye inner corner"), (17, [43, 44], "right eye upper lid"),
    (18, [45], "right eye outer corner"), (19, [46, 47], "right eye lower lid"),
    (20, [48, 60], "mouth left corner"), (21, [54, 64], "mouth right corner"),
    (22, [50, 51, 52], "upper lip outer"), (23, [56, 57, 58], "lower lip outer"),
    (24, [61, 62, 63], "upper lip inner"), (25, [65, 66, 67], "lower lip inner"),
]

REGIONS = {
    "face_contour": [0, 1, 2, 3, 4],
    "brows": [5, 6, 7, 8, 9, 10],
    "left_eye": [12, 13, 14, 15],
    "right_eye": [16, 17, 18, 19],
    "mouth": [20, 21, 22, 23, 24, 25],
}

# A plausible character: longer face, larger eyes, slightly smaller mouth.
EXAMPLE = {
    "global": {"scale": 0.9, "rotation": 0.05, "translation": [0.01, -0.02], "center": [0.5, 0.5]},
    "region": {
        "face_contour": {"matrix": [0.95, 0.0, 0.0, 1.15], "offset": [0.0, 0.01]},
        "left_eye": {"matrix": [1.3, 0.0, 0.0, 1.6], "offset": [-0.01, 0.0]},
        "right_eye": {"matrix": [1.3, 0.0, 0.0, 1.6], "offset": [0.01, 0.0]},
        "mouth": {"matrix": [0.8, 0.0, 0.0, 0.9], "offset": [0.0, -0.01]},
        "brows": {"matrix": [1.0, 0.1, 0.0, 1.0], "offset": [0.0, -0.015]},
    },
}


def neutral_face():
    p = []
    for i in range(17):  # jaw: lower half ellipse, image-left to image-right
        a = math.pi * (1.0 - i / 16.0)
        p.append((0.5 + 0.32 * math.cos(a), 0.45 + 0.40 * math.sin(a)))  # image y points down
    for side in (-1, 1):  # brows, five points each
        xs = [0.22, 0.26, 0.30, 0.34, 0.38] if side < 0 else [0.62, 0.66, 0.70, 0.74, 0.78]
        for k, x in enumerate(xs):
            p.append((x, 0.30 - 0.03 * math.sin(math.pi * k / 4)))
    for k in range(4):  # nose bridge
        p.append((0.5, 0.36 + 0.05 * k))
    for k in range(5):  # nostrils
        p.append((0.44 + 0.03 * k, 0.56 + 0.01 * (2 - abs(k - 2))))
    for cx in (0.33, 0.67):  # eyes: corner, two upper, corner, two lower
        w, h = 0.06, 0.02
        p += [(cx - w, 0.40), (cx - w / 3, 0.40 - h), (cx + w / 3, 0.40 - h),
              (cx + w, 0.40), (cx + w / 3, 0.40 + h), (cx - w / 3, 0.40 + h)]
    # outer lip 48..59, inner lip 60..67
    outer = [(0.40, 0.70), (0.43, 0.68), (0.47, 0.67), (0.50, 0.675), (0.53, 0.67), (0.57, 0.68),
             (0.60, 0.70), (0.57, 0.73), (0.53, 0.745), (0.50, 0.75), (0.47, 0.745), (0.43, 0.73)]
    inner = [(0.42, 0.70), (0.46, 0.695), (0.50, 0.695), (0.54, 0.695),
             (0.58, 0.70), (0.54, 0.705), (0.50, 0.705), (0.46, 0.705)]
    p += outer + inner
    assert len(p) == 68
    return [[round(x, 6), round(y, 6)] for (x, y) in p]


def merge(points):
    out = [None] * 26
    for t, src, _ in MERGE:
        out[t] = [sum(points[s][0] for s in src) / len(src), sum(points[s][1] for s in src) / len(src)]
    return out


def transform(pts, params):
    out = [list(q) for q in pts]
    for name, idx in REGIONS.items():
        r = params["region"].get(name, {"matrix": [1, 0, 0, 1], "offset": [0, 0]})
        m, o = r["matrix"], r["offset"]
        cx = sum(pts[i][0] for i in idx) / len(idx)
        cy = sum(pts[i][1] for i in idx) / len(idx)
        for i in idx:
            dx, dy = pts[i][0] - cx, pts[i][1] - cy
            out[i] = [m[0] * dx + m[1] * dy + o[0] + cx, m[2] * dx + m[3] * dy + o[1] + cy]
    g = params["global"]
    s, th = g["scale"], g["rotation"]
    (tx, ty), (ox, oy) = g["translation"], g["center"]
    c, sn = math.cos(th), math.sin(th)
    res = []
    for x, y in out:
        dx, dy = x - ox, y - oy
        res.append([ox + tx + s * (c * dx - sn * dy), oy + ty + s * (sn * dx + c * dy)])
    return res


def dump_points(path, scheme, pts):
    lines = ",\n".join(f"    [{repr(float(x))}, {repr(float(y))}]" for x, y in pts)
    path.write_text(f'{{\n  "scheme": "{scheme}",\n  "points": [\n{lines}\n  ]\n}}\n')


def toml_params(params):
    out = ["[global]"]
    g = params["global"]
    out += [f"scale = {g['scale']}", f"rotation = {g['rotation']}",
            f"translation = {g['translation']}", f"center = {g['center']}", ""]
    for name, r in params["region"].items():
        out += [f"[region.{name}]", f"matrix = {r['matrix']}", f"offset = {r['offset']}", ""]
    return "\n".join(out)


def main():
    LM.mkdir(parents=True, exist_ok=True)
    GOLD.mkdir(parents=True, exist_ok=True)
    table = {"entries": [{"target": t, "sources": s, "label": lab} for t, s, lab in MERGE]}
    (LM / "merge_table.json").write_text(json.dumps(table, indent=2) + "\n")
    face = neutral_face()
    dump_points(LM / "neutral_face.json", "human68", face)
    (LM / "example_params.toml").write_text(toml_params(EXAMPLE))
    identity = {"global": {"scale": 1.0, "rotation": 0.0, "translation": [0.0, 0.0], "center": [0.5, 0.5]},
                "region": {}}
    merged = merge(face)
    dump_points(GOLD / "neutral_face_anime26_identity.json", "anime26", transform(merged, identity))
    dump_points(GOLD / "neutral_face_anime26_example.json", "anime26", transform(merged, EXAMPLE))


if __name__ == "__main__":
    main()
