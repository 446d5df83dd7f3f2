"""HTTP and WebSocket service around a single labelling session.

The frame loop runs as one background task; API requests only queue work
or read state, and the queue drains at the next frame start, so the
session keeps its single-writer guarantee.  Subscribers receive one
message per frame: the frame report as JSON, then the composited frame
as a binary PNG.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field

from ..raycaster import encode_png
from ..rigging import RigError, Rotate, Translate
from .session import CommandError, Mode, Session

log = logging.getLogger(__name__)


class TextCommand(BaseModel):
    text: str


class PickRequest(BaseModel):
    pixel: list[int] = Field(min_length=2, max_length=2)
    radius: int = 0


class CameraRequest(BaseModel):
    motion: dict


class ModeRequest(BaseModel):
    mode: str


class LabelRequest(BaseModel):
    name: str
    colour: list[int] = Field(min_length=3, max_length=3)


def _parse_motion(body: dict):
    kind = body.get("kind")
    if kind == "translate":
        return Translate(str(body["axis"]), float(body["distance"]))
    if kind == "rotate":
        return Rotate(str(body["axis"]), float(body["angle"]))
    raise ValueError("motion kind must be 'translate' or 'rotate'")


class FrameBroker:
    """Fan-out of per-frame messages to websocket subscribers.

    Slow consumers never stall the loop: each queue holds only the
    latest frame, and the publisher replaces stale entries instead of
    blocking.
    """

    def __init__(self):
        self._queues: set[asyncio.Queue] = set()

    def subscribe(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=1)
        self._queues.add(q)
        return q

    def unsubscribe(self, q: asyncio.Queue) -> None:
        self._queues.discard(q)

    def publish(self, message) -> None:
        for q in list(self._queues):
            if q.full():
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(message)


def create_app(session: Session) -> FastAPI:
    """Build the service for one session; the frame loop runs while it serves."""
    broker = FrameBroker()

    max_fps = session.config.server.max_fps
    min_period = 1.0 / max_fps if max_fps > 0 else 0.0

    async def frame_loop():
        loop = asyncio.get_running_loop()
        while True:
            started = loop.time()
            try:
                report = await asyncio.to_thread(session.step)
            except Exception:
                log.exception("frame aborted; state rolled back")
                await asyncio.sleep(0.1)
                continue
            png = encode_png(session.last_image)
            broker.publish(
                {
                    "report": report.to_dict(),
                    "png_base64": base64.b64encode(png).decode("ascii"),
                }
            )
            elapsed = loop.time() - started
            await asyncio.sleep(max(0.0, min_period - elapsed))

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        app.state.frame_task = asyncio.create_task(frame_loop())
        try:
            yield
        finally:
            app.state.frame_task.cancel()

    app = FastAPI(title="paintbox", version="0.1.0", lifespan=lifespan)
    app.state.session = session
    app.state.broker = broker
    app.state.frame_task = None

    @app.get("/state")
    def get_state():
        return session.state()

    @app.post("/command")
    def post_command(body: TextCommand):
        try:
            return session.queue_text(body.text)
        except CommandError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/pick")
    def post_pick(body: PickRequest):
        try:
            return session.queue_pick(body.pixel, body.radius)
        except CommandError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/camera")
    def post_camera(body: CameraRequest):
        try:
            motion = _parse_motion(body.motion)
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        try:
            return session.queue_motion(motion)
        except RigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.post("/mode")
    def post_mode(body: ModeRequest):
        try:
            return session.queue_text(f"mode {body.mode}")
        except CommandError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/labels")
    def get_labels():
        return {
            "labels": [
                {"id": info.id, "name": info.name, "colour": list(info.colour)}
                for info in session.scene.label_table
            ]
        }

    @app.post("/labels")
    def post_labels(body: LabelRequest):
        try:
            info = session.scene.add_label(body.name, tuple(body.colour))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"id": info.id, "name": info.name, "colour": list(info.colour)}

    @app.get("/forest/stats")
    def forest_stats():
        return session.forest.stats()

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        queue = broker.subscribe()
        try:
            while True:
                message = await queue.get()
                await ws.send_text(json.dumps({"report": message["report"]}))
                await ws.send_bytes(base64.b64decode(message["png_base64"]))
        except WebSocketDisconnect:
            pass
        finally:
            broker.unsubscribe(queue)

    return app
