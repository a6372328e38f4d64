"""Writer for the ``CCRFS 1`` feature-set text format.

The format is the external interface of the ccr engine: one header line,
keyed metadata lines, ``sp`` lines for superpixels (contiguous ids 0..S-1),
and ``f`` lines for features. Floats use ``repr`` (shortest round-trip),
newlines are LF, so output bytes are deterministic.
"""

from __future__ import annotations

import io

MAGIC = "CCRFS 1"


def fmt(x) -> str:
    return repr(float(x))


def write_feature_set_file(
    path,
    image_id: str,
    global_desc,
    desc_dim: int,
    superpixels,
    features,
) -> None:
    """Write one feature set.

    superpixels: iterable of (cx, cy) centers, implicitly ids 0..S-1.
    features: iterable of (x, y, superpixel_id, descriptor).
    """
    if not image_id or any(c.isspace() for c in image_id):
        raise ValueError("image_id must be nonempty without whitespace")
    buf = io.StringIO()
    buf.write(MAGIC + "\n")
    buf.write(f"image_id {image_id}\n")
    global_desc = list(global_desc)
    buf.write(f"global_dim {len(global_desc)}\n")
    buf.write("global" + "".join(" " + fmt(v) for v in global_desc) + "\n")
    buf.write(f"desc_dim {desc_dim}\n")
    superpixels = list(superpixels)
    buf.write(f"num_superpixels {len(superpixels)}\n")
    for i, (cx, cy) in enumerate(superpixels):
        buf.write(f"sp {i} {fmt(cx)} {fmt(cy)}\n")
    features = list(features)
    buf.write(f"num_features {len(features)}\n")
    for x, y, sp_id, desc in features:
        if not 0 <= sp_id < len(superpixels):
            raise ValueError(f"feature references unknown superpixel {sp_id}")
        buf.write(
            f"f {fmt(x)} {fmt(y)} {int(sp_id)}"
            + "".join(" " + fmt(v) for v in desc)
            + "\n"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())
