"""Writes `fixture_day.csv`: a deterministic one-day, one-minute profile for
the devices in `ieee33.case`. Shapes are synthetic (clear-sky PV bell with
cloud dips, fluctuating wind, two-peak load) and contain no randomness, so
the file is reproducible byte-for-byte.

Forecast columns hold the next minute's value with a small periodic error,
as a stand-in for an external forecaster's output.

    python3 generate_fixture_day.py
"""
import math

PV_BUSES = (12, 18, 24, 30)
PV_RATED = 500.0
WIND_BUS = 27
WIND_RATED = 1000.0
SUNRISE = 4 * 60 + 50
SUNSET = 20 * 60 + 40
MINUTES = 24 * 60


def pv(minute, j):
    if minute <= SUNRISE or minute >= SUNSET:
        return 0.0
    x = (minute - SUNRISE) / (SUNSET - SUNRISE)
    clear = (0.90 + 0.02 * j) * PV_RATED * math.sin(math.pi * x) ** 1.3
    dip = max(0.0, math.sin(2 * math.pi * minute / (53 + 7 * j) + j)) ** 3
    cloud = 1.0 - 0.35 * dip * (0.5 + 0.5 * math.sin(2 * math.pi * minute / 211))
    return clear * cloud


def wind(minute):
    w = (450 + 250 * math.sin(2 * math.pi * minute / 480 + 0.7)
         + 80 * math.sin(2 * math.pi * minute / 37)
         + 40 * math.sin(2 * math.pi * minute / 11.3))
    return min(max(w, 50.0), 950.0)


def load_scale(minute):
    h = minute / 60
    return (0.6 + 0.2 * math.exp(-((h - 9) / 2.5) ** 2)
            + 0.35 * math.exp(-((h - 19) / 2.2) ** 2))


def main():
    series = {f"pv_{b}": [pv(m, j) for m in range(MINUTES)] for j, b in enumerate(PV_BUSES)}
    series[f"wind_{WIND_BUS}"] = [wind(m) for m in range(MINUTES)]
    rated = {f"pv_{b}": PV_RATED for b in PV_BUSES}
    rated[f"wind_{WIND_BUS}"] = WIND_RATED
    names = list(series)
    header = ["timestamp", *names, "load_scale", *(f"fc_{n}" for n in names)]
    rows = [",".join(header)]
    for m in range(MINUTES):
        nxt = min(m + 1, MINUTES - 1)
        err = 1.0 + 0.04 * math.sin(2 * math.pi * m / 17)
        ts = f"2019-08-20T{m // 60:02d}:{m % 60:02d}:00"
        vals = [f"{series[n][m]:.3f}" for n in names]
        fcs = [f"{min(series[n][nxt] * err, rated[n]):.3f}" for n in names]
        rows.append(",".join([ts, *vals, f"{load_scale(m):.4f}", *fcs]))
    with open("fixture_day.csv", "w") as f:
        f.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
