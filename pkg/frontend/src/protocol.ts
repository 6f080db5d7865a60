// Wire protocol of the generation service: JSON text messages over one
// WebSocket. Every outbound message is validated against these schemas
// before it is sent; malformed inbound frames are dropped with a console
// diagnostic rather than breaking the stream.

import { z } from "zod";

export const vec2 = z.tuple([z.number(), z.number()]);

export const openMessage = z.object({
  type: z.literal("open"),
  pose: z.string().optional(),
  pace: z.string().optional(),
  session: z.string().optional(),
  trajectory: z.array(vec2).optional(),
  speed: z.number().nonnegative().optional(),
  pace_mode: z.enum(["delayed", "bidirectional"]).optional(),
});

export const controlsMessage = z
  .object({
    type: z.literal("controls"),
    session: z.string().optional(),
    extend_trajectory: z.array(vec2).min(1).optional(),
    set_target_speed: z.number().nonnegative().optional(),
    set_facing_offset: z.number().optional(),
  })
  .refine(
    (m) =>
      m.extend_trajectory !== undefined ||
      m.set_target_speed !== undefined ||
      m.set_facing_offset !== undefined,
    { message: "controls message carries no edits" },
  );

export const stepMessage = z.object({
  type: z.literal("step"),
  session: z.string().optional(),
  count: z.number().int().min(1).max(10000),
});

export const clientMessage = z.union([openMessage, controlsMessage, stepMessage]);

export const skeletonMessage = z.object({
  type: z.literal("skeleton"),
  session: z.string(),
  frame_rate: z.number().positive(),
  names: z.array(z.string()),
  parents: z.array(z.number().int()),
  offsets: z.array(z.array(z.number()).length(3)),
  end_site: z.array(z.boolean()),
});

export const frameMessage = z.object({
  type: z.literal("frame"),
  index: z.number().int(),
  t: z.number(),
  theta: z.number(),
  root: z.array(z.number()).length(3),
  quats: z.array(z.array(z.number()).length(4)),
  positions: z.array(z.array(z.number()).length(3)),
});

export const ackMessage = z.object({
  type: z.literal("ack"),
  session: z.string().optional(),
  applied: z.array(z.string()).optional(),
});

export const errorMessage = z.object({
  type: z.literal("error"),
  code: z.string(),
  message: z.string().optional(),
});

export const serverMessage = z.union([skeletonMessage, frameMessage, ackMessage, errorMessage]);

export type Vec2 = z.infer<typeof vec2>;
export type OpenMessage = z.infer<typeof openMessage>;
export type ControlsMessage = z.infer<typeof controlsMessage>;
export type StepMessage = z.infer<typeof stepMessage>;
export type ClientMessage = z.infer<typeof clientMessage>;
export type SkeletonMessage = z.infer<typeof skeletonMessage>;
export type FrameMessage = z.infer<typeof frameMessage>;
export type ServerMessage = z.infer<typeof serverMessage>;

export function encodeClientMessage(msg: ClientMessage): string {
  const parsed = clientMessage.parse(msg);
  return JSON.stringify(parsed);
}

export function decodeServerMessage(text: string): ServerMessage | null {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    console.warn("dropping unparseable frame:", err);
    return null;
  }
  const result = serverMessage.safeParse(raw);
  if (!result.success) {
    console.warn("dropping malformed message:", result.error.issues[0]?.message);
    return null;
  }
  return result.data;
}
