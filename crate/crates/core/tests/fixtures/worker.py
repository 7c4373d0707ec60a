"""Test worker speaking the length-prefixed envelope protocol."""
import json
import struct
import sys
import time


def read_exact(n):
    buf = b""
    while len(buf) < n:
        chunk = sys.stdin.buffer.read(n - len(buf))
        if not chunk:
            raise EOFError("short read")
        buf += chunk
    return buf


def read_frame():
    (n,) = struct.unpack(">I", read_exact(4))
    return read_exact(n)


def write_frame(out, data):
    out.write(struct.pack(">I", len(data)))
    out.write(data)


def main():
    code = read_frame().decode()
    (count,) = struct.unpack(">I", read_exact(4))
    layers = [json.loads(read_frame()) for _ in range(count)]
    out = sys.stdout.buffer

    if code == "sleep":
        time.sleep(30)
    if code == "flood":
        chunk = b"x" * 65536
        while True:
            out.write(chunk)
    if code == "fail":
        sys.stderr.write("worker refused\n")
        sys.exit(3)
    if code == "garbage":
        out.write(b"\x00\x01")
        return
    if code.startswith("negate:"):
        column = code.split(":", 1)[1]
        for layer in layers:
            names = [a["name"] for a in layer["schema"]]
            i = names.index(column)
            for row in layer["records"]:
                if row[i] is not None:
                    row[i] = -row[i]

    out.write(struct.pack(">I", len(layers)))
    for layer in layers:
        write_frame(out, json.dumps(layer).encode())
    write_frame(out, ("processed %d layers\n" % len(layers)).encode())


main()
