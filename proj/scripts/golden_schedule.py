"""Writes the golden staggered-timestep tables from closed-form expressions."""
import csv
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "golden"


def group_vector(K, G, T, t0):
    g = K // G
    return [t0 + (i // g) * (T // G) for i in range(K)]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "group_timesteps_K16_G4.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t0", "frame_index", "timestep"])
        for t0 in (1, 125, 250):
            for i, t in enumerate(group_vector(16, 4, 1000, t0)):
                w.writerow([t0, i, t])

    # steady-state pile: head level cycles T/G, T/G - T/(NG), ..., T/(NG)
    for K, G, N in ((16, 4, 1), (16, 4, 2), (8, 4, 5)):
        T = 1000
        step = T // (N * G)
        with open(OUT / f"schedule_K{K}_G{G}_N{N}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["iteration", "frame_index", "timestep"])
            for it in range(3 * N):
                t0 = T // G - (it % N) * step
                for i, t in enumerate(group_vector(K, G, T, t0)):
                    w.writerow([it, i, t])


if __name__ == "__main__":
    main()
