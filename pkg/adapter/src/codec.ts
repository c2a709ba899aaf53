/**
 * Tensor wire codec: base64-encoded little-endian float32, row-major,
 * with explicit dims. Matches the engine's TensorEncoding frames.
 */

export interface TensorEncoding {
  dtype: "float32";
  dims: number[];
  data: string;
}

export const encodeTensor = (values: Float32Array, dims: number[]): TensorEncoding => {
  const expected = dims.reduce((a, b) => a * b, 1);
  if (values.length !== expected) {
    throw new Error(`tensor has ${values.length} values, dims ${dims} expect ${expected}`);
  }
  const buffer = Buffer.from(values.buffer, values.byteOffset, values.byteLength);
  return { dtype: "float32", dims: [...dims], data: buffer.toString("base64") };
};

export const decodeTensor = (enc: TensorEncoding): { values: Float32Array; dims: number[] } => {
  if (enc.dtype !== "float32") {
    throw new Error(`unsupported dtype ${enc.dtype}`);
  }
  if (!Array.isArray(enc.dims) || enc.dims.some((d) => !Number.isInteger(d) || d <= 0)) {
    throw new Error(`bad dims ${JSON.stringify(enc.dims)}`);
  }
  const buffer = Buffer.from(enc.data, "base64");
  const expected = enc.dims.reduce((a, b) => a * b, 1) * 4;
  if (buffer.byteLength !== expected) {
    throw new Error(`tensor byte length ${buffer.byteLength} does not match dims (expected ${expected})`);
  }
  const values = new Float32Array(buffer.buffer, buffer.byteOffset, buffer.byteLength / 4);
  for (const v of values) {
    if (!Number.isFinite(v)) {
      throw new Error("tensor contains non-finite values");
    }
  }
  return { values: Float32Array.from(values), dims: [...enc.dims] };
};
