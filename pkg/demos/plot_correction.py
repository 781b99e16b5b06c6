"""Drive the command-line surface end to end and sketch the plotdata CSV.

explain writes result.json, plotdata flattens it to (series, x, y) rows,
and the crude raster below stands in for whatever plotting stack you
actually use.
"""
import csv
import json
import tempfile
from pathlib import Path

from symcor import cli, relunet, synth

work = Path(tempfile.mkdtemp(prefix="symcor-demo-"))
net_path = work / "net.json"
cfg_path = work / "config.json"
result_path = work / "result.json"
plot_path = work / "plot.csv"

net_path.write_text(relunet.save_network(synth.diag_reference_net()))
cfg_path.write_text(json.dumps(
    {"domain": {"lo": [-1.0, -1.0], "hi": [1.0, 1.0]}}))

rc = cli.run(["explain", "--network", str(net_path), "--instance", "0.2,0.1",
              "--config", str(cfg_path), "--out", str(result_path)])
print("explain exit code:", rc)
rc = cli.run(["verify", "--network", str(net_path),
              "--result", str(result_path)])
print("verify exit code:", rc)
rc = cli.run(["plotdata", "--result", str(result_path),
              "--out", str(plot_path)])
print("plotdata exit code:", rc)

series = {}
with open(plot_path, newline="") as fh:
    for row in csv.DictReader(fh):
        series.setdefault(row["series"], []).append(
            (float(row["x"]), float(row["y"])))

W, H = 64, 26
LO, HI = -1.05, 1.05
grid = [[" "] * W for _ in range(H)]


def put(x, y, ch):
    col = int((x - LO) / (HI - LO) * (W - 1))
    row = int((HI - y) / (HI - LO) * (H - 1))
    if 0 <= col < W and 0 <= row < H:
        grid[row][col] = ch


def trace(points, ch):
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        for t in range(161):
            f = t / 160.0
            put(x0 + f * (x1 - x0), y0 + f * (y1 - y0), ch)


for name, pts in sorted(series.items()):
    if name.startswith("region"):
        trace(pts, ".")
for name, pts in series.items():
    if name == "correction":
        trace(pts, "#")
put(*series["center"][0], "o")
put(*series["instance"][0], "X")

print()
print("domain [%.2f, %.2f]^2   . region edge   # correction   X instance"
      "   o center" % (LO, HI))
print("+" + "-" * W + "+")
for row in grid:
    print("|" + "".join(row) + "|")
print("+" + "-" * W + "+")

payload = json.loads(result_path.read_text())
print("\ndistance %.6f, %d regions, elapsed %.2fs"
      % (payload["interpretation"]["distance"],
         len(payload["regions"]), payload["elapsed"]))
