import json
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import tornado.ioloop
import tornado.web

from utils.cascade import QualityGate
from utils.config import ServiceConfig
from utils.errors import DetectorFailure, IrisGateError, MalformedImage, TooLarge, UnsupportedFormat
from utils.log import log


ACCEPTED_CONTENT_TYPES = ("image/png", "image/jpeg")
# Chunked bodies have no Content-Length; this much past the limit still reaches the handler
CHUNKED_ALLOWANCE = 1024 * 1024


def server_options(max_upload_bytes: int) -> dict:
    """HTTP server settings matching an upload limit."""
    return {"max_body_size": max_upload_bytes + CHUNKED_ALLOWANCE}


class BaseHandler(tornado.web.RequestHandler):

    def initialize(self, gate: QualityGate, executor: ThreadPoolExecutor) -> None:
        self.gate = gate
        self.executor = executor
        self.request_id = str(uuid.uuid4())


    def write_json(self, status: int, payload: dict) -> None:
        self.set_status(status)
        self.set_header("Content-Type", "application/json; charset=UTF-8")
        self.finish(json.dumps(payload))


    def write_error_json(self, status: int, error: IrisGateError) -> None:
        log.request_error_event(status, error.code, self.request_id)
        payload = {"error": error.code, "message": error.message, "request_id": self.request_id}
        if isinstance(error, DetectorFailure):
            payload["tier"] = error.tier
        self.write_json(status, payload)


@tornado.web.stream_request_body
class AssessHandler(BaseHandler):

    def prepare(self) -> None:
        self.started = time.perf_counter()
        self.chunks = []
        self.received = 0
        self.rejected = False
        try:
            declared = int(self.request.headers.get("Content-Length", "0"))
        except ValueError:
            declared = 0
        if declared > self.gate.max_upload_bytes:
            # The body is still read and discarded after the 413 is written
            self.request.connection.set_max_body_size(declared)
            self.reject_too_large()


    def data_received(self, chunk: bytes) -> None:
        if self.rejected:
            return
        self.received += len(chunk)
        if self.received > self.gate.max_upload_bytes:
            self.chunks = []
            return self.reject_too_large()
        self.chunks.append(chunk)


    def reject_too_large(self) -> None:
        self.rejected = True
        self.write_error_json(413, TooLarge(f"Upload exceeds {self.gate.max_upload_bytes} bytes"))


    async def post(self) -> None:
        if self.rejected:
            return
        content_type = self.request.headers.get("Content-Type", "").split(";")[0].strip().lower()
        body = b"".join(self.chunks)

        # Error handling
        if not body:
            return self.write_error_json(400, MalformedImage("Empty request body"))
        if content_type not in ACCEPTED_CONTENT_TYPES:
            return self.write_error_json(415, UnsupportedFormat(f"Content type {content_type or 'none'} is not an image/png or image/jpeg"))

        try:
            verdict = await tornado.ioloop.IOLoop.current().run_in_executor(self.executor, self.gate.assess_bytes, body)
        except UnsupportedFormat as e:
            return self.write_error_json(415, e)
        except TooLarge as e:
            return self.write_error_json(413, e)
        except MalformedImage as e:
            return self.write_error_json(400, e)
        except DetectorFailure as e:
            return self.write_error_json(500, e)

        elapsed_ms = (time.perf_counter() - self.started) * 1000.0
        log.verdict_event(verdict.decision.value, verdict.feedback_code.value, elapsed_ms, self.request_id)
        payload = verdict.to_json_dict()
        payload["request_id"] = self.request_id
        payload["processing_ms"] = round(elapsed_ms, 3)
        self.write_json(200, payload)


class HealthHandler(BaseHandler):

    def get(self) -> None:
        self.write_json(200, {"status": "ok", **self.gate.describe()})


def make_app(gate: QualityGate, workers: int = 4) -> tornado.web.Application:
    executor = ThreadPoolExecutor(max_workers=workers)
    handler_args = {"gate": gate, "executor": executor}
    return tornado.web.Application([
        (r"/assess", AssessHandler, handler_args),
        (r"/healthz", HealthHandler, handler_args),
    ])


def serve(cfg: ServiceConfig, gate: Optional[QualityGate] = None) -> None:
    """Load both detectors, then listen; a model that fails to load stops startup."""
    gate = gate or QualityGate.from_config(cfg)
    app = make_app(gate)
    app.listen(cfg.port, address=cfg.host, **server_options(cfg.max_upload_bytes))
    log.logger.info("listening on %s:%s", cfg.host, cfg.port)
    tornado.ioloop.IOLoop.current().start()
