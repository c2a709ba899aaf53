/**
 * Wire-protocol session: one JSON object per line, ids strictly
 * increasing per connection, request/response alternation.
 *
 * Error codes: 1 bad-request, 2 unsupported-objective, 3 internal,
 * 4 shutdown.
 */

import { decodeTensor, encodeTensor, TensorEncoding } from "./codec";
import { DetectorBinding, WireObjective } from "./detector";

export const PROTOCOL_VERSION = 1;

export const ERR_BAD_REQUEST = 1;
export const ERR_UNSUPPORTED_OBJECTIVE = 2;
export const ERR_INTERNAL = 3;
export const ERR_SHUTDOWN = 4;

export interface Message {
  id: number | null;
  op: string;
  payload: Record<string, unknown>;
}

const error = (id: number | null, code: number, message: string): Message => ({
  id,
  op: "error",
  payload: { code, message },
});

export class Session {
  private lastId = 0;
  done = false;

  constructor(private readonly binding: DetectorBinding) {}

  handleLine(line: string): Message {
    let msg: Record<string, unknown>;
    try {
      msg = JSON.parse(line);
    } catch (exc) {
      return error(null, ERR_BAD_REQUEST, `unparseable frame: ${exc}`);
    }
    if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
      return error(null, ERR_BAD_REQUEST, "frame must be a JSON object");
    }
    const id = msg.id;
    const op = msg.op;
    if (!Number.isInteger(id) || (id as number) <= this.lastId) {
      return error(
        Number.isInteger(id) ? (id as number) : null,
        ERR_BAD_REQUEST,
        "ids must be strictly increasing integers"
      );
    }
    this.lastId = id as number;
    const payload = (msg.payload ?? {}) as Record<string, unknown>;
    try {
      return this.dispatch(id as number, op as string, payload);
    } catch (exc) {
      return error(id as number, ERR_INTERNAL, `${exc}`);
    }
  }

  private dispatch(id: number, op: string, payload: Record<string, unknown>): Message {
    if (op === "hello") {
      if (payload.protocol_version !== PROTOCOL_VERSION) {
        return error(
          id,
          ERR_BAD_REQUEST,
          `unsupported protocol_version ${JSON.stringify(payload.protocol_version)}`
        );
      }
      return {
        id,
        op: "hello",
        payload: {
          protocol_version: PROTOCOL_VERSION,
          capabilities: { eval: true, grad: true, objectives: this.binding.objectives },
        },
      };
    }
    if (op === "bye") {
      this.done = true;
      return { id, op: "bye", payload: {} };
    }
    if (op !== "eval" && op !== "grad") {
      return error(id, ERR_BAD_REQUEST, `unknown op ${JSON.stringify(op)}`);
    }

    const objective = payload.objective as WireObjective | undefined;
    if (!objective || typeof objective.kind !== "string") {
      return error(id, ERR_BAD_REQUEST, "missing objective");
    }
    if (!this.binding.supports(objective.kind)) {
      return error(id, ERR_UNSUPPORTED_OBJECTIVE, `objective ${JSON.stringify(objective.kind)} unsupported`);
    }
    const target = objective.target ?? ({} as WireObjective["target"]);
    if (!Array.isArray(target.bbox) || target.bbox.length !== 4) {
      return error(id, ERR_BAD_REQUEST, `bad target bbox ${JSON.stringify(target.bbox)}`);
    }

    let image: { values: Float32Array; dims: number[] };
    try {
      image = decodeTensor(payload.image as TensorEncoding);
    } catch (exc) {
      return error(id, ERR_BAD_REQUEST, `${exc instanceof Error ? exc.message : exc}`);
    }
    if (image.dims.length !== 3 || image.dims[2] !== 3) {
      return error(id, ERR_BAD_REQUEST, `image dims must be HxWx3, got ${JSON.stringify(image.dims)}`);
    }

    if (op === "eval") {
      const result = this.binding.evaluate(image.values, image.dims, objective);
      return {
        id,
        op: "eval",
        payload: {
          value: result.value,
          detections: result.detections.map((d) => ({
            bbox: d.bbox,
            score: d.score,
            category: d.category,
          })),
        },
      };
    }
    const grad = this.binding.gradient(image.values, image.dims, objective);
    return { id, op: "grad", payload: { grad: encodeTensor(grad, image.dims) } };
  }
}
