"""Streaming generation service.

Holds frozen pose/pace checkpoints, runs one locomotion session per client
session id, accepts live trajectory/speed/facing edits, and streams frames
(with FK positions, so thin clients need no kinematics) over a WebSocket
carrying JSON text messages. REST endpoints expose health and the checkpoint
inventory.
"""

from __future__ import annotations

import asyncio
import uuid
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field, ValidationError

from .gait import (
    DegeneratePath,
    EndOfTrajectory,
    IncompatibleSkeleton,
    LocomotionSession,
    PathBehindCharacter,
    load_pace_checkpoint,
)
from .posenet import load_pose_checkpoint


class UnknownCheckpoint(KeyError):
    pass


class SessionLimit(RuntimeError):
    pass


# -- protocol models --------------------------------------------------------


class OpenMessage(BaseModel):
    type: Literal["open"]
    pose: str = ""
    pace: str = ""
    session: Optional[str] = None          # reattach to an existing session
    trajectory: Optional[list] = None      # [[x, y], ...] ground-plane points
    speed: float = 1.0
    pace_mode: Literal["delayed", "bidirectional"] = "delayed"


class ControlsMessage(BaseModel):
    type: Literal["controls"]
    session: Optional[str] = None
    extend_trajectory: Optional[list] = None
    set_target_speed: Optional[float] = None
    set_facing_offset: Optional[float] = None


class StepMessage(BaseModel):
    type: Literal["step"]
    session: Optional[str] = None
    count: int = Field(default=1, ge=1, le=10_000)


class ClientEnvelope(BaseModel):
    message: Union[OpenMessage, ControlsMessage, StepMessage] = Field(discriminator="type")


class CheckpointInfo(BaseModel):
    id: str
    kind: str
    path: str


class HealthResponse(BaseModel):
    status: str
    pose_checkpoints: list[str]
    pace_checkpoints: list[str]
    sessions: int
    max_sessions: int


# -- service state ----------------------------------------------------------


class SessionHolder:
    def __init__(self, session):
        self.session = session
        self.lock = asyncio.Lock()
        self.target_speed = session.target_speed


class MotionService:
    def __init__(self, checkpoint_dir, max_sessions=8, frame_rate=None):
        self.checkpoint_dir = Path(checkpoint_dir)
        self.max_sessions = max_sessions
        self.frame_rate = frame_rate
        self.pose = {}
        self.pace = {}
        self.sessions = {}
        self._scan()

    def _scan(self):
        from .nn import load_checkpoint

        for path in sorted(self.checkpoint_dir.glob("*.ckpt")):
            header, _ = load_checkpoint(path)
            kind = header.get("kind")
            if kind == "pose":
                self.pose[path.stem] = path
            elif kind == "pace":
                self.pace[path.stem] = path
        self._pose_cache = {}
        self._pace_cache = {}

    def pose_bundle(self, name):
        if name not in self.pose:
            raise UnknownCheckpoint(name)
        if name not in self._pose_cache:
            self._pose_cache[name] = load_pose_checkpoint(self.pose[name])
        return self._pose_cache[name]

    def pace_bundle(self, name):
        if name not in self.pace:
            raise UnknownCheckpoint(name)
        if name not in self._pace_cache:
            self._pace_cache[name] = load_pace_checkpoint(self.pace[name])
        return self._pace_cache[name]

    def open_session(self, msg: OpenMessage):
        if msg.session:
            holder = self.sessions.get(msg.session)
            if holder is None:
                raise UnknownCheckpoint(msg.session)
            return msg.session, holder
        if len(self.sessions) >= self.max_sessions:
            raise SessionLimit(f"session limit {self.max_sessions} reached")
        bundle = self.pose_bundle(msg.pose)
        pace_net, pace_header = self.pace_bundle(msg.pace)
        header = bundle["header"]
        if header["extras"].get("task") != "locomotion" or "prefix_rotations" not in bundle["extra"]:
            raise IncompatibleSkeleton(f"pose checkpoint {msg.pose!r} cannot drive a session")
        frame_rate = self.frame_rate or float(header["extras"]["frame_rate"])
        prefix = {
            "rotations": bundle["extra"]["prefix_rotations"],
            "controls": bundle["extra"]["prefix_controls"],
            "translations": bundle["extra"]["prefix_translations"],
            "theta_end": header["extras"].get("prefix_theta_end", 0.0),
        }
        session = LocomotionSession(
            bundle["skeleton"], bundle["net"], pace_net,
            msg.trajectory,
            target_speed=msg.speed,
            frame_rate=frame_rate,
            segment_length=float(pace_header["extras"]["segment_length"]),
            prefix=prefix,
            pace_mode=msg.pace_mode,
        )
        session_id = uuid.uuid4().hex
        holder = SessionHolder(session)
        self.sessions[session_id] = holder
        return session_id, holder

    def close_session(self, session_id):
        self.sessions.pop(session_id, None)


def skeleton_message(session_id, skeleton, frame_rate):
    return {
        "type": "skeleton",
        "session": session_id,
        "frame_rate": frame_rate,
        "names": list(skeleton.names),
        "parents": list(skeleton.parents),
        "offsets": skeleton.offsets.tolist(),
        "end_site": [bool(e) for e in skeleton.end_site],
    }


def frame_message(frame):
    return {
        "type": "frame",
        "index": frame.index,
        "t": frame.timestamp,
        "theta": frame.theta,
        "root": [float(v) for v in frame.root_position],
        "quats": frame.rotations.tolist(),
        "positions": frame.positions.tolist(),
    }


def error_message(code, detail=""):
    return {"type": "error", "code": code, "message": detail}


def create_app(checkpoint_dir, max_sessions=8, frame_rate=None):
    service = MotionService(checkpoint_dir, max_sessions=max_sessions, frame_rate=frame_rate)
    app = FastAPI(title="quatmotion generation service")
    app.state.service = service

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(
            status="ok",
            pose_checkpoints=sorted(service.pose),
            pace_checkpoints=sorted(service.pace),
            sessions=len(service.sessions),
            max_sessions=service.max_sessions,
        )

    @app.get("/checkpoints", response_model=list[CheckpointInfo])
    def checkpoints():
        out = [CheckpointInfo(id=k, kind="pose", path=str(p)) for k, p in sorted(service.pose.items())]
        out += [CheckpointInfo(id=k, kind="pace", path=str(p)) for k, p in sorted(service.pace.items())]
        return out

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        current_id = None
        try:
            while True:
                raw = await ws.receive_json()
                try:
                    msg = ClientEnvelope(message=raw).message
                except ValidationError as err:
                    await ws.send_json(error_message("BadMessage", str(err)))
                    continue
                try:
                    if isinstance(msg, OpenMessage):
                        current_id, holder = service.open_session(msg)
                        await ws.send_json(
                            skeleton_message(current_id, holder.session.skeleton,
                                             holder.session.frame_rate)
                        )
                    elif isinstance(msg, ControlsMessage):
                        holder = _resolve(service, msg.session or current_id)
                        async with holder.lock:
                            applied = []
                            if msg.extend_trajectory is not None:
                                added = holder.session.extend_trajectory(
                                    np.asarray(msg.extend_trajectory, dtype=np.float64)
                                )
                                applied.append(f"extend_trajectory:+{added}")
                            if msg.set_target_speed is not None:
                                holder.session.set_target_speed(msg.set_target_speed)
                                applied.append("set_target_speed")
                            if msg.set_facing_offset is not None:
                                holder.session.set_facing_offset(msg.set_facing_offset)
                                applied.append("set_facing_offset")
                        await ws.send_json({"type": "ack", "session": msg.session or current_id,
                                            "applied": applied})
                    elif isinstance(msg, StepMessage):
                        holder = _resolve(service, msg.session or current_id)
                        async with holder.lock:
                            for _ in range(msg.count):
                                try:
                                    frame = holder.session.step()
                                except EndOfTrajectory:
                                    await ws.send_json(
                                        error_message("EndOfTrajectory",
                                                      "spline exhausted; extend the trajectory")
                                    )
                                    break
                                await ws.send_json(frame_message(frame))
                except UnknownCheckpoint as err:
                    await ws.send_json(error_message("UnknownCheckpoint", str(err)))
                except PathBehindCharacter as err:
                    await ws.send_json(error_message("PathBehindCharacter", str(err)))
                except (IncompatibleSkeleton, DegeneratePath) as err:
                    await ws.send_json(error_message(type(err).__name__, str(err)))
                except SessionLimit as err:
                    await ws.send_json(error_message("SessionLimit", str(err)))
        except WebSocketDisconnect:
            pass

    return app


def _resolve(service, session_id):
    holder = service.sessions.get(session_id)
    if holder is None:
        raise UnknownCheckpoint(f"session {session_id!r}")
    return holder
