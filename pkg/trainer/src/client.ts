/**
 * Protocol-v1 client. The trainer never links the simulator; it spawns the
 * environment server as a child process and exchanges newline-delimited
 * JSON over stdio (or connects to an already-running TCP server).
 */

import { ChildProcess, spawn } from "node:child_process";
import * as net from "node:net";
import * as readline from "node:readline";

export interface StateMessage {
  kind: "state";
  observation: number[];
  reward: number | null;
  done: boolean;
  info: Record<string, unknown>;
}

export interface ReadyMessage {
  kind: "ready";
  protocol_version: number;
  observation_layout: Record<string, unknown>;
  action_spaces: Record<string, unknown>;
}

export type Response = StateMessage | ReadyMessage | { kind: "error"; code: string; detail: string };

export type FeeAction = { pb_tick: number; ps_tick: number; pr_tick: number };
export type MatchingAction = { rule: number; threshold_tick: number };
export type Action = FeeAction | MatchingAction;

interface Transport {
  write(line: string): void;
  onLine(handler: (line: string) => void): void;
  close(): Promise<void>;
}

class StdioTransport implements Transport {
  private child: ChildProcess;
  private handler: ((line: string) => void) | null = null;

  constructor(command: string, args: string[]) {
    this.child = spawn(command, args, { stdio: ["pipe", "pipe", "inherit"] });
    const rl = readline.createInterface({ input: this.child.stdout! });
    rl.on("line", (line) => this.handler?.(line));
  }

  write(line: string): void {
    this.child.stdin!.write(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.handler = handler;
  }

  close(): Promise<void> {
    return new Promise((resolve) => {
      this.child.once("exit", () => resolve());
      this.child.stdin!.end();
      setTimeout(() => {
        this.child.kill();
        resolve();
      }, 5000).unref();
    });
  }
}

class TcpTransport implements Transport {
  private socket: net.Socket;
  private handler: ((line: string) => void) | null = null;

  constructor(host: string, port: number) {
    this.socket = net.createConnection({ host, port });
    const rl = readline.createInterface({ input: this.socket });
    rl.on("line", (line) => this.handler?.(line));
  }

  write(line: string): void {
    this.socket.write(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.handler = handler;
  }

  close(): Promise<void> {
    return new Promise((resolve) => {
      this.socket.end(() => resolve());
    });
  }
}

export class EnvClient {
  private transport: Transport;
  private queue: Array<(line: string) => void> = [];

  private constructor(transport: Transport) {
    this.transport = transport;
    this.transport.onLine((line) => {
      const next = this.queue.shift();
      if (next) next(line);
    });
  }

  /** Spawn `python -m platsim.cli serve --serve stdio` as a child. */
  static spawnStdio(configDir: string, python = "python3"): EnvClient {
    return new EnvClient(
      new StdioTransport(python, ["-m", "platsim.cli", "serve", "--serve", "stdio", "--config-dir", configDir]),
    );
  }

  static connectTcp(host: string, port: number): EnvClient {
    return new EnvClient(new TcpTransport(host, port));
  }

  private request(message: Record<string, unknown>): Promise<Response> {
    return new Promise((resolve, reject) => {
      this.queue.push((line) => {
        try {
          resolve(JSON.parse(line) as Response);
        } catch (err) {
          reject(err);
        }
      });
      this.transport.write(JSON.stringify(message));
    });
  }

  private async expectState(message: Record<string, unknown>): Promise<StateMessage> {
    const response = await this.request(message);
    if (response.kind === "error") {
      throw new Error(`env server error ${response.code}: ${response.detail}`);
    }
    if (response.kind !== "state") {
      throw new Error(`expected a state message, got ${response.kind}`);
    }
    return response;
  }

  async hello(): Promise<ReadyMessage> {
    const response = await this.request({ kind: "hello", protocol_version: 1 });
    if (response.kind !== "ready") throw new Error(`handshake failed: ${JSON.stringify(response)}`);
    return response;
  }

  reset(configRef: string, seed: number, mode: "fee_setting" | "matching"): Promise<StateMessage> {
    return this.expectState({ kind: "reset", config_ref: configRef, seed, mode });
  }

  step(action: Action): Promise<StateMessage> {
    return this.expectState({ kind: "step", action });
  }

  async close(): Promise<void> {
    this.transport.write(JSON.stringify({ kind: "close" }));
    await this.transport.close();
  }
}
