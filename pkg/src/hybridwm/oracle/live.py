"""Oracle backed by an OpenAI-compatible chat completions endpoint."""

from __future__ import annotations

import json
import logging
import os
import re
import time
from importlib import resources
from string import Template

import httpx

from .base import LOGPROB_FLOOR, KnowledgeOracle, OracleError, OracleRequest

log = logging.getLogger(__name__)

ENV_URL = "HYBRIDWM_ORACLE_URL"
ENV_MODEL = "HYBRIDWM_ORACLE_MODEL"
ENV_KEY = "HYBRIDWM_ORACLE_API_KEY"

_YES = re.compile(r"^\W*yes\W*$", re.IGNORECASE)


def load_prompt(name: str) -> Template:
    return Template(resources.files(__package__).joinpath("prompts", name + ".txt").read_text("utf-8"))


def _grammar() -> str:
    return resources.files("hybridwm.patchscript").joinpath("GRAMMAR.md").read_text("utf-8")


def _j(value) -> str:
    return json.dumps(value, sort_keys=True)


def _variables(schema: dict | None) -> str:
    if not schema:
        return "(not given)"
    lines = []
    for v in schema.get("variables", ()):
        extra = f" levels {v['levels']}" if "levels" in v else ""
        lines.append(f"- {v['name']} ({v['stream']}, {v['kind']}{extra}): {v.get('description', '')}")
    return "\n".join(lines)


def render(request: OracleRequest) -> tuple[str, str]:
    """System and user message text for ``request``."""
    ctx, p = request.context, request.payload
    system = load_prompt("system").safe_substitute(environment_doc=ctx.get("environment_doc", ""))
    fields: dict = {"variables": _variables(ctx.get("schema"))}
    if request.kind == "plausibility":
        if p["target"] is None:
            edges = "; ".join(f"{a} influences {b}" for a, b in p["edges"]) or "no variable influences another"
        else:
            parents = ", ".join(p["parents"])
            edges = (f"{p['target']} is directly influenced by exactly: {parents}" if parents
                     else f"{p['target']} is not directly influenced by any other variable")
        fields["structure"] = edges
    elif request.kind == "topo_next":
        fields.update(ordered=", ".join(p["ordered"]) or "(none)", remaining=", ".join(p["remaining"]))
    elif request.kind == "elicit_parents":
        fields.update(node=p["node"], predecessors=", ".join(p["predecessors"]))
    elif request.kind == "propose_refinements":
        c = p["context"]
        fields.update(
            error_kind=c.get("error_kind"), detail=c.get("detail", ""), action=_j(c.get("action")),
            prev_det=_j(c.get("prev_det")), prev_sto=_j(c.get("prev_sto")),
            true_valid=_j(c.get("true_valid")), true_det=_j(c.get("true_det")),
            pred_valid=_j(c.get("pred_valid")), pred_det=_j(c.get("pred_det")),
            diff=_j(c.get("diff", [])), feedback=c.get("feedback", "(none)"),
            functions=json.dumps(c.get("functions", []), indent=2), grammar=_grammar(), k=p["k"],
        )
    elif request.kind == "init_program":
        actions = (ctx.get("schema") or {}).get("actions", [])
        fields.update(actions=json.dumps(actions, indent=2), grammar=_grammar())
    user = load_prompt(request.kind).safe_substitute(fields)
    return system, user


def _json_content(text: str) -> dict:
    text = text.strip()
    if text.startswith("```"):
        text = text.strip("`")
        text = text[text.find("\n") + 1:] if "\n" in text else text
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end < start:
        raise OracleError("reply contains no JSON object")
    try:
        out = json.loads(text[start:end + 1])
    except json.JSONDecodeError as e:
        raise OracleError(f"reply is not valid JSON: {e}") from None
    if not isinstance(out, dict):
        raise OracleError("reply JSON is not an object")
    return out


def yes_logprob(choice: dict) -> float:
    """Log-probability of a "yes" first token, floored when it is absent."""
    content = ((choice.get("logprobs") or {}).get("content")) or []
    if not content:
        return LOGPROB_FLOOR
    first = content[0]
    candidates = [first] + list(first.get("top_logprobs") or [])
    best = LOGPROB_FLOOR
    for c in candidates:
        if _YES.match(c.get("token", "")):
            best = max(best, float(c.get("logprob", LOGPROB_FLOOR)))
    return best


class LiveOracle(KnowledgeOracle):
    def __init__(self, url: str | None = None, model: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0, retries: int = 3, backoff: float = 1.0,
                 transport: httpx.BaseTransport | None = None):
        super().__init__()
        self.url = url or os.environ.get(ENV_URL)
        self.model = model or os.environ.get(ENV_MODEL)
        api_key = api_key or os.environ.get(ENV_KEY)
        if not self.url or not self.model:
            raise OracleError(f"live oracle needs {ENV_URL} and {ENV_MODEL}")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.client = httpx.Client(base_url=self.url.rstrip("/"), headers=headers, timeout=timeout,
                                   transport=transport)
        self.retries = retries
        self.backoff = backoff

    def _post(self, body: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                r = self.client.post("/chat/completions", json=body)
                if r.status_code >= 500 or r.status_code == 429:
                    raise OracleError(f"endpoint returned HTTP {r.status_code}")
                if r.status_code >= 400:
                    # client errors will not improve on retry
                    raise OracleError(f"endpoint rejected request: HTTP {r.status_code} {r.text[:200]}")
                return r.json()
            except (httpx.HTTPError, OracleError, ValueError) as e:
                last = e
                if isinstance(e, OracleError) and "rejected" in str(e):
                    break
                log.warning("oracle call failed (attempt %d/%d): %s", attempt + 1, self.retries, e)
                if attempt + 1 < self.retries and self.backoff > 0:
                    time.sleep(self.backoff * 2**attempt)
        raise OracleError(f"oracle unavailable: {last}")

    def respond(self, request: OracleRequest) -> dict:
        system, user = render(request)
        body: dict = {
            "model": self.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "temperature": 0,
        }
        seed = request.payload.get("seed")
        if seed is not None:
            body["seed"] = seed
        if request.kind == "plausibility":
            body.update(max_tokens=1, logprobs=True, top_logprobs=10)
        else:
            body["response_format"] = {"type": "json_object"}
        reply = self._post(body)
        try:
            choice = reply["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise OracleError("reply has no choices") from None
        if request.kind == "plausibility":
            return {"log_prob_yes": yes_logprob(choice)}
        return _json_content((choice.get("message") or {}).get("content") or "")

    def close(self) -> None:
        self.client.close()
