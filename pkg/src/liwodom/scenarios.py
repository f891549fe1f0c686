"""Ready-made worlds and trajectory scripts for desk-scale experiments."""

from __future__ import annotations

import math

from .simulation import Plane, Segment, SimWorld, TrajectoryScript, box_planes

LOOP_SIZE = (30.0, 20.0)
CORRIDOR_WIDTH = 4.0
CEILING = 3.0


def room_world(size=(20.0, 12.0), height: float = CEILING) -> SimWorld:
    """Closed box room with inward-facing walls, floor and ceiling, plus two pillars."""
    lx, ly = size
    planes = box_planes((0.0, 0.0, 0.0), (lx, ly, height), inward=True)
    obstacles = []
    for cx, cy in ((0.3 * lx, 0.65 * ly), (0.7 * lx, 0.35 * ly)):
        lo, hi = (cx - 0.5, cy - 0.5, 0.0), (cx + 0.5, cy + 0.5, height)
        planes += [p for p in box_planes(lo, hi, inward=False) if p.normal[2] == 0.0]
        obstacles.append((lo, hi))
    return SimWorld(tuple(planes), ((0.0, 0.0, 0.0), (lx, ly, height)), tuple(obstacles))


def corridor_loop_world(size=LOOP_SIZE, width: float = CORRIDOR_WIDTH, height: float = CEILING) -> SimWorld:
    """Rectangular ring corridor: outer walls face in, the central block faces out."""
    lx, ly = size
    planes = box_planes((0.0, 0.0, 0.0), (lx, ly, height), inward=True)
    lo, hi = (width, width, 0.0), (lx - width, ly - width, height)
    planes += [p for p in box_planes(lo, hi, inward=False) if p.normal[2] == 0.0]
    # a few door recesses and pillars break the symmetry along the straights
    for x in (9.0, 21.0):
        plo, phi = (x - 0.3, 0.0, 0.0), (x + 0.3, 0.6, height)
        planes += [p for p in box_planes(plo, phi, inward=False) if p.normal[2] == 0.0 and p.normal[1] >= 0]
    for y in (10.0,):
        plo, phi = (lx - 0.6, y - 0.3, 0.0), (lx, y + 0.3, height)
        planes += [p for p in box_planes(plo, phi, inward=False) if p.normal[2] == 0.0 and p.normal[0] <= 0]
    obstacles = [(lo, hi), ((8.7, 0.0, 0.0), (9.3, 0.6, height)), ((20.7, 0.0, 0.0), (21.3, 0.6, height))]
    obstacles.append(((lx - 0.6, 9.7, 0.0), (lx, 10.3, height)))
    return SimWorld(tuple(planes), ((0.0, 0.0, 0.0), (lx, ly, height)), tuple(obstacles))


def loop_script(duration: float = 60.0, rest: float = 2.0, speed: float = 1.5, turn_speed: float = 1.0) -> TrajectoryScript:
    """Counter-clockwise laps of :func:`corridor_loop_world` (straights and 90 degree arcs).

    Starts at rest for ``rest`` seconds and stops at ``duration``.
    """
    lx, ly = LOOP_SIZE
    w = CORRIDOR_WIDTH
    radius = 0.5 * w
    start_x = 6.0
    arc_t = 0.5 * math.pi * radius / turn_speed
    arc_w = turn_speed / radius
    legs = [
        ("bottom", lx - w - start_x),
        ("right", ly - 2 * w),
        ("top", lx - 2 * w),
        ("left", ly - 2 * w),
        ("bottom", lx - 2 * w),
    ]
    segs = [Segment(rest, 0.0, 0.0, "rest")]
    left = duration - rest
    lap = 0
    while left > 1e-9:
        for name, length in legs[1:] if lap else legs[:1] + legs[1:]:
            t = min(length / speed, left)
            segs.append(Segment(t, speed, 0.0, f"{name}-straight"))
            left -= t
            if left <= 1e-9:
                break
            t = min(arc_t, left)
            segs.append(Segment(t, turn_speed, arc_w, f"{name}-arc"))
            left -= t
            if left <= 1e-9:
                break
        lap += 1
    return TrajectoryScript(tuple(segs), blend=0.5, start_xy=(start_x, 0.5 * w), start_yaw=0.0)


def rest_script(duration: float = 5.0) -> TrajectoryScript:
    return TrajectoryScript((Segment(duration, 0.0, 0.0, "rest"),), start_xy=(6.0, 0.5 * CORRIDOR_WIDTH))


def straight_script(duration: float = 3.0, rest: float = 1.0, speed: float = 1.0) -> TrajectoryScript:
    return TrajectoryScript(
        (Segment(rest, 0.0, 0.0, "rest"), Segment(duration - rest, speed, 0.0, "straight")),
        start_xy=(6.0, 0.5 * CORRIDOR_WIDTH),
    )


__all__ = ["Plane", "corridor_loop_world", "loop_script", "rest_script", "room_world", "straight_script"]
