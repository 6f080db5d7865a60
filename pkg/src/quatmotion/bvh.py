"""BVH 1.0 reading and writing.

Rotation channels are converted to quaternions with the file's per-joint
channel order; End Sites become zero-rotation leaf joints. Angles are degrees
in the file, radians in memory. Units pass through unchanged.
"""

from __future__ import annotations

import numpy as np

from . import quat
from .skeleton import MotionClip, Skeleton


class ParseError(ValueError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnsupportedChannel(ValueError):
    pass


_POSITION_CHANNELS = {"Xposition": 0, "Yposition": 1, "Zposition": 2}
_ROTATION_CHANNELS = {"Xrotation": "x", "Yrotation": "y", "Zrotation": "z"}


class _Tokens:
    def __init__(self, text):
        self.items = []  # (line_number, token)
        for n, line in enumerate(text.splitlines(), 1):
            for tok in line.split():
                self.items.append((n, tok))
        self.pos = 0

    def peek(self):
        if self.pos >= len(self.items):
            raise ParseError(self.items[-1][0] if self.items else 0, "unexpected end of file")
        return self.items[self.pos]

    def next(self):
        item = self.peek()
        self.pos += 1
        return item

    def expect(self, token):
        line, tok = self.next()
        if tok.upper() != token.upper():
            raise ParseError(line, f"expected {token!r}, got {tok!r}")
        return line

    def floats(self, count):
        out = []
        for _ in range(count):
            line, tok = self.next()
            try:
                out.append(float(tok))
            except ValueError:
                raise ParseError(line, f"expected a number, got {tok!r}") from None
        return out


def parse_bvh(text, fix_continuity=True):
    """Parse BVH text into (Skeleton, MotionClip).

    Non-root position channels are read and discarded (offsets come from the
    OFFSET lines). fix_continuity applies the antipodal sign fix per joint.
    """
    toks = _Tokens(text)
    toks.expect("HIERARCHY")

    names, parents, offsets, orders, end_flags = [], [], [], [], []
    channels = []  # per joint: list of channel names (empty for end sites)

    def parse_joint(parent_index, is_root):
        line, kw = toks.next()
        if is_root:
            if kw.upper() != "ROOT":
                raise ParseError(line, f"expected ROOT, got {kw!r}")
        elif kw.upper() not in ("JOINT",):
            raise ParseError(line, f"expected JOINT, got {kw!r}")
        _, name = toks.next()
        index = len(names)
        names.append(name)
        parents.append(parent_index)
        toks.expect("{")
        toks.expect("OFFSET")
        offsets.append(toks.floats(3))
        line = toks.expect("CHANNELS")
        nline, ntok = toks.next()
        try:
            n_channels = int(ntok)
        except ValueError:
            raise ParseError(nline, f"bad channel count {ntok!r}") from None
        chans = []
        for _ in range(n_channels):
            cline, ctok = toks.next()
            if ctok not in _POSITION_CHANNELS and ctok not in _ROTATION_CHANNELS:
                raise UnsupportedChannel(f"line {cline}: channel {ctok!r}")
            chans.append(ctok)
        channels.append(chans)
        rot_order = "".join(_ROTATION_CHANNELS[c] for c in chans if c in _ROTATION_CHANNELS)
        orders.append(rot_order if len(rot_order) == 3 else "zyx")
        end_flags.append(False)
        while True:
            line, tok = toks.peek()
            up = tok.upper()
            if up == "JOINT":
                parse_joint(index, False)
            elif up == "END":
                toks.next()
                _, site = toks.next()
                if site.lower() != "site":
                    raise ParseError(line, f"expected 'End Site', got 'End {site}'")
                names.append(name + "_end")
                parents.append(index)
                end_flags.append(True)
                channels.append([])
                orders.append("zyx")
                toks.expect("{")
                toks.expect("OFFSET")
                offsets.append(toks.floats(3))
                toks.expect("}")
            elif up == "}":
                toks.next()
                return
            else:
                raise ParseError(line, f"unexpected token {tok!r} in joint block")

    parse_joint(-1, True)

    toks.expect("MOTION")
    toks.expect("Frames:")
    fline, ftok = toks.next()
    try:
        n_frames = int(ftok)
    except ValueError:
        raise ParseError(fline, f"bad frame count {ftok!r}") from None
    toks.expect("Frame")
    toks.expect("Time:")
    tline, ttok = toks.next()
    try:
        frame_time = float(ttok)
    except ValueError:
        raise ParseError(tline, f"bad frame time {ttok!r}") from None
    if frame_time <= 0:
        raise ParseError(tline, f"frame time must be positive, got {frame_time}")

    row_width = sum(len(c) for c in channels)
    remaining = len(toks.items) - toks.pos
    if remaining != n_frames * row_width:
        raise ParseError(
            toks.items[-1][0] if toks.items else 0,
            f"MOTION declares {n_frames} frames x {row_width} channels "
            f"= {n_frames * row_width} values, found {remaining}",
        )
    values = np.array(toks.floats(n_frames * row_width)).reshape(n_frames, row_width)

    j_count = len(names)
    root_positions = np.zeros((n_frames, 3))
    rotations = np.zeros((n_frames, j_count, 4))
    rotations[..., 0] = 1.0
    col = 0
    for j in range(j_count):
        pos_cols = {}
        angles = []
        for c in channels[j]:
            if c in _POSITION_CHANNELS:
                pos_cols[_POSITION_CHANNELS[c]] = col
            else:
                angles.append(col)
            col += 1
        if j == 0:
            for axis, c in pos_cols.items():
                root_positions[:, axis] = values[:, c]
        if angles:
            deg = values[:, angles]
            q = quat.euler_to_quat(np.radians(deg), orders[j])
            rotations[:, j] = quat.fix_antipodal(q) if fix_continuity else q

    skel = Skeleton(
        names=tuple(names),
        parents=tuple(parents),
        offsets=np.array(offsets),
        euler_orders=tuple(orders),
        end_site=tuple(end_flags),
    )
    clip = MotionClip(frame_rate=1.0 / frame_time, root_positions=root_positions, rotations=rotations)
    return skel, clip


def write_bvh(skeleton, clip, float_format="%.6f"):
    """Serialize (skeleton, clip) back to BVH text.

    Root gets 3 position + 3 rotation channels, other joints 3 rotation
    channels, each in the joint's euler order; end-site joints are written as
    End Site blocks. Round-trips through parse_bvh to ~1e-6 rad.
    """
    lines = ["HIERARCHY"]
    channel_joints = []

    def fmt3(v):
        return " ".join(float_format % x for x in v)

    def emit(j, depth, keyword):
        pad = "\t" * depth
        if skeleton.end_site[j]:
            lines.append(f"{pad}End Site")
            lines.append(pad + "{")
            lines.append(f"{pad}\tOFFSET {fmt3(skeleton.offsets[j])}")
            lines.append(pad + "}")
            return
        lines.append(f"{pad}{keyword} {skeleton.names[j]}")
        lines.append(pad + "{")
        lines.append(f"{pad}\tOFFSET {fmt3(skeleton.offsets[j])}")
        order = skeleton.euler_orders[j]
        rot_channels = " ".join(f"{ax.upper()}rotation" for ax in order)
        if j == 0:
            lines.append(f"{pad}\tCHANNELS 6 Xposition Yposition Zposition {rot_channels}")
        else:
            lines.append(f"{pad}\tCHANNELS 3 {rot_channels}")
        channel_joints.append(j)
        for c in skeleton.children(j):
            emit(c, depth + 1, "JOINT")
        lines.append(pad + "}")

    emit(0, 0, "ROOT")
    lines.append("MOTION")
    lines.append(f"Frames: {clip.frames}")
    lines.append(f"Frame Time: {1.0 / clip.frame_rate:.8f}")

    cols = []
    cols.append(clip.root_positions)
    for j in channel_joints:
        deg = np.degrees(quat.quat_to_euler(clip.rotations[:, j], skeleton.euler_orders[j]))
        cols.append(deg)
    table = np.concatenate(cols, axis=1)
    for row in table:
        lines.append(" ".join(float_format % x for x in row))
    return "\n".join(lines) + "\n"
