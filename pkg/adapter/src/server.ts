/**
 * Oracle server entry point: NDJSON protocol over TCP or stdio.
 *
 * Usage:
 *   node dist/server.js --stdio [--seed N] [--input-size S]
 *   node dist/server.js --port 9000 [--host 127.0.0.1] [--config binding.json]
 */

import * as fs from "fs";
import * as net from "net";
import * as readline from "readline";

import { BindingConfig, DetectorBinding } from "./detector";
import { Session } from "./protocol";

interface Args {
  stdio: boolean;
  host: string;
  port: number;
  config: Partial<BindingConfig>;
}

const parseArgs = (argv: string[]): Args => {
  const args: Args = { stdio: false, host: "127.0.0.1", port: 0, config: {} };
  for (let i = 0; i < argv.length; i += 1) {
    const a = argv[i];
    if (a === "--stdio") args.stdio = true;
    else if (a === "--host") args.host = argv[++i];
    else if (a === "--port") args.port = parseInt(argv[++i], 10);
    else if (a === "--seed") args.config.seed = parseInt(argv[++i], 10);
    else if (a === "--input-size") args.config.inputSize = parseInt(argv[++i], 10);
    else if (a === "--score-threshold") args.config.scoreThreshold = parseFloat(argv[++i]);
    else if (a === "--config") {
      args.config = { ...args.config, ...JSON.parse(fs.readFileSync(argv[++i], "utf-8")) };
    } else {
      process.stderr.write(`unknown argument ${a}\n`);
      process.exit(2);
    }
  }
  return args;
};

const serveStdio = (binding: DetectorBinding) => {
  const session = new Session(binding);
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  rl.on("line", (line) => {
    if (!line.trim()) return;
    const response = session.handleLine(line);
    process.stdout.write(JSON.stringify(response) + "\n");
    if (session.done) {
      rl.close();
      process.exit(0);
    }
  });
};

const serveTcp = (binding: DetectorBinding, host: string, port: number) => {
  const server = net.createServer((socket) => {
    const session = new Session(binding);
    const rl = readline.createInterface({ input: socket, terminal: false });
    rl.on("line", (line) => {
      if (!line.trim()) return;
      const response = session.handleLine(line);
      socket.write(JSON.stringify(response) + "\n");
      if (session.done) socket.end();
    });
    socket.on("error", () => socket.destroy());
  });
  server.listen(port, host, () => {
    const addr = server.address() as net.AddressInfo;
    process.stderr.write(`serving detector binding on ${addr.address}:${addr.port}\n`);
    process.stdout.write(`${addr.port}\n`);
  });
};

const main = () => {
  const args = parseArgs(process.argv.slice(2));
  const binding = new DetectorBinding(args.config);
  if (args.stdio) {
    serveStdio(binding);
  } else {
    serveTcp(binding, args.host, args.port);
  }
};

main();
