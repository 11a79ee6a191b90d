"""Regenerate the shipped synthetic event sample in sampledata/.

The sample imitates the shape of a conflict-event extract: 8,490 events
over 2015-2022 in a fictional six-region country on a 6x6 degree square,
with clustered locations, categorical event types, seasonal months,
free-text notes that sometimes name an armed group, and a heavily
zero-inflated fatality count (median 1, long right tail).

Counts come from the package's own two-part generative logic: a logistic
occurrence layer and a negative-binomial severity layer on top of smooth
spatial bumps, a mild year trend, and the log-population offset of the
containing region.  Everything is seeded; rerunning this script must
reproduce sampledata/ byte for byte.
"""

import json
from pathlib import Path

import numpy as np
from scipy.special import expit

from hurdlemap.likelihoods import FamilySpec, sample_family

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "sampledata"

SEED = 20240817
N_EVENTS = 8490
YEARS = list(range(2015, 2023))
LON0, LON1, LAT0, LAT1 = 36.0, 42.0, 4.0, 10.0

REGION_NAMES = ["Westmarch", "Northvale", "Eastfen",
                "Southreach", "Midlands", "Lakeshore"]

EVENT_TYPES = ["Armed clash", "Attack", "Remote explosive",
               "Violent demonstration", "Abduction/forced disappearance",
               "Shelling/artillery/missile attack"]
TYPE_PROBS = [0.34, 0.22, 0.10, 0.18, 0.08, 0.08]
# occurrence and severity effects per type (vs Armed clash)
TYPE_OCC = {"Armed clash": 0.0, "Attack": 0.4, "Remote explosive": -0.2,
            "Violent demonstration": -1.6,
            "Abduction/forced disappearance": -2.0,
            "Shelling/artillery/missile attack": 0.2}
TYPE_SEV = {"Armed clash": 0.0, "Attack": -0.3, "Remote explosive": -0.6,
            "Violent demonstration": -1.2,
            "Abduction/forced disappearance": -1.0,
            "Shelling/artillery/missile attack": 0.3}

GROUPS = ["TPLF", "OLA", "ONLF", "EDF", "Eritrea army", "Ginbot7",
          "EUFF", "SPLA", "TPDM"]
GROUP_PROBS = [0.10, 0.08, 0.04, 0.05, 0.03, 0.01, 0.01, 0.02, 0.01]
NOTE_TEMPLATES = ["clashes involving {g} near a town",
                  "{g} forces engaged local militia",
                  "attack attributed to {g} fighters",
                  "skirmish with {g} reported by residents"]
PLAIN_NOTES = ["unidentified armed men attacked villagers",
               "communal dispute escalated", "roadside incident",
               ""]

HOTSPOTS = [(37.2, 8.6, 1.1, 1.4), (40.8, 6.0, 1.0, 1.1),
            (38.5, 5.2, 0.8, 0.8), (41.2, 9.2, 0.7, 0.9)]


def region_polygons():
    lon_edges = np.linspace(LON0, LON1, 4)   # 3 columns
    lat_edges = np.linspace(LAT0, LAT1, 3)   # 2 rows
    polys = {}
    k = 0
    for j in range(2):
        for i in range(3):
            ring = [[lon_edges[i], lat_edges[j]],
                    [lon_edges[i + 1], lat_edges[j]],
                    [lon_edges[i + 1], lat_edges[j + 1]],
                    [lon_edges[i], lat_edges[j + 1]],
                    [lon_edges[i], lat_edges[j]]]
            polys[REGION_NAMES[k]] = ring
            k += 1
    return polys


def region_of(lon, lat, polys):
    for name, ring in polys.items():
        x0, y0 = ring[0]
        x1, y1 = ring[2]
        if x0 <= lon <= x1 and y0 <= lat <= y1:
            return name
    raise ValueError("point outside all regions")


def smooth_bump(lon, lat, centers, scale):
    z = np.zeros_like(lon)
    for cx, cy, sx, amp in centers:
        z += amp * np.exp(-0.5 * (((lon - cx) / sx) ** 2
                                  + ((lat - cy) / sx) ** 2))
    return scale * z


def main():
    rng = np.random.default_rng(SEED)
    polys = region_polygons()

    base_pop = dict(zip(REGION_NAMES,
                        [2.1e6, 4.8e6, 3.3e6, 6.4e6, 8.9e6, 2.7e6]))
    populations = {name: {year: base_pop[name] * 1.025 ** (year - YEARS[0])
                          for year in YEARS} for name in REGION_NAMES}

    # clustered locations: hotspots plus a uniform background
    n_bg = N_EVENTS // 4
    n_hs = N_EVENTS - n_bg
    weights = np.array([hp[3] for hp in HOTSPOTS])
    choice = rng.choice(len(HOTSPOTS), size=n_hs, p=weights / weights.sum())
    lon = np.empty(N_EVENTS)
    lat = np.empty(N_EVENTS)
    for k, (cx, cy, sx, _) in enumerate(HOTSPOTS):
        m = choice == k
        lon[:n_hs][m] = rng.normal(cx, sx * 0.7, m.sum())
        lat[:n_hs][m] = rng.normal(cy, sx * 0.7, m.sum())
    lon[n_hs:] = rng.uniform(LON0, LON1, n_bg)
    lat[n_hs:] = rng.uniform(LAT0, LAT1, n_bg)
    lon = np.clip(lon, LON0 + 0.01, LON1 - 0.01)
    lat = np.clip(lat, LAT0 + 0.01, LAT1 - 0.01)

    years = rng.choice(YEARS, size=N_EVENTS,
                       p=np.linspace(0.6, 1.4, len(YEARS))
                       / np.linspace(0.6, 1.4, len(YEARS)).sum())
    months = rng.integers(1, 13, N_EVENTS)
    types = rng.choice(EVENT_TYPES, size=N_EVENTS, p=TYPE_PROBS)

    group = np.array([""] * N_EVENTS, dtype=object)
    notes = np.empty(N_EVENTS, dtype=object)
    u = rng.random(N_EVENTS)
    cum = np.cumsum(GROUP_PROBS)
    for i in range(N_EVENTS):
        if u[i] < cum[-1]:
            g = GROUPS[int(np.searchsorted(cum, u[i]))]
            group[i] = g
            notes[i] = NOTE_TEMPLATES[i % len(NOTE_TEMPLATES)].format(g=g)
        else:
            notes[i] = PLAIN_NOTES[i % len(PLAIN_NOTES)]

    season_occ = {"Winter": -0.22, "Spring": -0.22, "Summer": -0.09,
                  "Autumn": 0.0}
    season_sev = {"Winter": -0.02, "Spring": 0.06, "Summer": 0.14,
                  "Autumn": 0.0}
    group_occ = {g: v for g, v in zip(GROUPS, [0.3, 0.5, 0.6, -0.7, 0.8,
                                               1.0, 0.4, 0.7, 0.5])}
    group_sev = {g: v for g, v in zip(GROUPS, [0.5, 0.2, 0.5, 0.8, 0.9,
                                               -0.6, -0.3, 0.6, 0.1])}

    def season(m):
        if m in (12, 1, 2):
            return "Winter"
        if m in (3, 4, 5):
            return "Spring"
        if m in (6, 7, 8):
            return "Summer"
        return "Autumn"

    regions = np.array([region_of(x, y, polys) for x, y in zip(lon, lat)])
    log_pop = np.array([np.log(populations[r][int(t)])
                        for r, t in zip(regions, years)])
    trend = -0.05 * (years - np.mean(YEARS))

    eta_occ = (0.9
               + np.array([TYPE_OCC[t] for t in types])
               + np.array([season_occ[season(m)] for m in months])
               + np.array([group_occ.get(g, 0.0) for g in group])
               + smooth_bump(lon, lat, HOTSPOTS, 0.8)
               + 0.5 * trend)
    eta_sev = (log_pop - 15.1
               + np.array([TYPE_SEV[t] for t in types])
               + np.array([season_sev[season(m)] for m in months])
               + np.array([group_sev.get(g, 0.0) for g in group])
               + smooth_bump(lon, lat, HOTSPOTS, 1.1)
               + trend)

    occurrence = rng.random(N_EVENTS) < expit(eta_occ)
    counts = sample_family(FamilySpec("negbinomial", 1.5), eta_sev, rng)
    fatalities = np.where(occurrence, counts, 0)

    OUT.mkdir(exist_ok=True)
    lines = ["longitude,latitude,year,month,event_type,fatalities,notes"]
    for i in range(N_EVENTS):
        note = str(notes[i]).replace(",", ";")
        lines.append(f"{float(lon[i])!r},{float(lat[i])!r},{int(years[i])},"
                     f"{int(months[i])},{types[i]},{int(fatalities[i])},"
                     f"{note}")
    (OUT / "events.csv").write_text("\n".join(lines) + "\n")

    features = [{"type": "Feature",
                 "geometry": {"type": "Polygon", "coordinates": [ring]},
                 "properties": {"name": name}}
                for name, ring in polys.items()]
    (OUT / "regions.geojson").write_text(json.dumps(
        {"type": "FeatureCollection", "features": features}, indent=1) + "\n")

    pop_lines = ["region,year,population"]
    for name in REGION_NAMES:
        for year in YEARS:
            pop_lines.append(f"{name},{year},{populations[name][year]!r}")
    (OUT / "population.csv").write_text("\n".join(pop_lines) + "\n")

    config = {
        "events": "sampledata/events.csv",
        "regions": "sampledata/regions.geojson",
        "population": "sampledata/population.csv",
        "form": "II",
        "family": "negbinomial",
        "max_edge": 1.5,
        "threshold_grid_cap": 5,
        "pi_samples": 4000,
        "waic_samples": 400,
        "adequacy_samples": 1000,
        "grid_nx": 60,
        "grid_ny": 60,
        "exceed_samples": 10000,
        "exceed_threshold": 20,
    }
    (OUT / "config.json").write_text(json.dumps(config, indent=1) + "\n")

    print(f"events: {N_EVENTS}, zeros: {(fatalities == 0).sum()}, "
          f"median: {np.median(fatalities)}, max: {fatalities.max()}")
    print(f"wrote {OUT}/events.csv, regions.geojson, population.csv, "
          f"config.json")


if __name__ == "__main__":
    main()
