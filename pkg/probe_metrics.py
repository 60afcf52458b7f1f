import numpy as np
from sadcoeff import metrics
from sadcoeff.errors import ConfigError, DegenerateInputError, DimensionError

rng = np.random.default_rng(11)

# pose_diversity
c = np.ones((8, 6)) * 0.3
assert metrics.pose_diversity([c, c.copy(), c.copy()]) <= 1e-12
a = np.zeros((5, 6)); b = np.zeros((5, 6)); b[:, 2] = 2.0
d = metrics.pose_diversity([a, b])
print("diversity two-const:", d, "want", 1 / 6)
assert abs(d - 1 / 6) <= 1e-15
s1, s2, s3 = rng.normal(size=(3, 7, 6))
base = metrics.pose_diversity([s1, s2, s3])
assert metrics.pose_diversity([s3, s1, s2]) == base
off = rng.normal(size=(1, 6))
shifted = metrics.pose_diversity([s1 + off, s2 + off, s3 + off])
print("translation invariance err:", abs(shifted - base))
assert abs(shifted - base) <= 1e-12
try:
    metrics.pose_diversity([s1]); raise SystemExit("no <2 reject")
except DimensionError as e:
    print("<2 reject:", e)

# motion_beats: constant -> empty
assert metrics.motion_beats(np.ones((20, 6)), 25.0).size == 0
# triangle wave yaw, period 1 s at fps 25; phase-shifted so turning points
# fall between samples (a sampled extremum leaves the speed unchanged)
fps = 25.0
t = np.arange(100) / fps
tri = 2 * np.abs((t - 0.01) % 1.0 - 0.5)   # turning points at 0.01 + 0.5k s
seq = np.zeros((100, 6)); seq[:, 0] = tri
beats = metrics.motion_beats(seq, fps)
print("triangle beats:", beats)
turns = 0.01 + np.arange(0.0, 3.9, 0.5)
for bt in beats:
    assert np.min(np.abs(turns - bt)) <= 1.0 / fps + 1e-9, bt
# every interior turning point should be found
for tp in turns[1:-1]:
    assert np.min(np.abs(beats - tp)) <= 1.0 / fps + 1e-9, tp

# suppression: two dips 40 ms apart at fps 50 -> one beat
fps2 = 50.0
sp = np.full(40, 1.0)
# build a pose seq whose speed has dips at speed idx 10 and 12 (times .21 s, .25 s)
# construct via cumulative sum of desired speeds in one dim
want_speed = sp.copy(); want_speed[10] = 0.1; want_speed[12] = 0.05
seq2 = np.zeros((41, 6)); seq2[:, 0] = np.concatenate([[0], np.cumsum(want_speed)])
b2 = metrics.motion_beats(seq2, fps2)
print("suppression beats:", b2, "(dips at 0.21, 0.25)")
assert b2.size == 1 and abs(b2[0] - (12 + 0.5) / fps2) <= 1e-12  # deeper dip kept
try:
    metrics.motion_beats(np.ones((2, 6)), 25.0); raise SystemExit("no short reject")
except DimensionError as e:
    print("short reject:", e)

# beat_align
ba = metrics.beat_align
assert ba([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
v = ba([1.0], [2.0], metrics.BeatAlignConfig(sigma=1.0))
print("align exp(-0.5):", v, "want", np.exp(-0.5))
assert abs(v - np.exp(-0.5)) <= 1e-15
assert ba([], [1.0]) == 0.0 and ba([1.0], []) == 0.0 and ba([], []) == 0.0
# global shift invariance
au, mo = rng.uniform(0, 10, 5), rng.uniform(0, 10, 4)
assert abs(ba(au, mo) - ba(au + 3.7, mo + 3.7)) <= 1e-12
# monotone, single beat
ds = [ba([1.0], [1.0 + eps]) for eps in (0.0, 0.05, 0.1, 0.2, 0.5)]
assert all(x >= y for x, y in zip(ds, ds[1:]))
print("monotone single-beat: OK", ds)
try:
    metrics.BeatAlignConfig(sigma=0.0); raise SystemExit("no sigma reject")
except ConfigError as e:
    print("sigma reject:", e)

# blink_recovery
from sadcoeff import synthdata
lmodel = synthdata.gen_landmark_model(1234)
mean = lmodel.mean.numpy()
T = 50
z = rng.uniform(0, 1, T)
# synthesize landmarks whose eye height scales with z
lms = np.tile(mean[None], (T, 1, 1))[..., :2]
for i in range(T):
    for (up, lo) in ((37, 41), (38, 40), (43, 47), (44, 46)):
        mid = (mean[up, :2] + mean[lo, :2]) / 2
        lms[i, up] = mid + (mean[up, :2] - mid) * z[i]
        lms[i, lo] = mid + (mean[lo, :2] - mid) * z[i]
r = metrics.blink_recovery(lms, z)
print("blink linear corr:", r)
assert r > 0.9999
rneg = metrics.blink_recovery(lms, -z + 1)
print("blink anticorr:", rneg)
assert rneg < -0.9999
zn = z + rng.normal(scale=0.1, size=T) * 0  # ratio side noisy instead
r2 = metrics.blink_recovery(lms, z + rng.normal(scale=0.1, size=T))
print("noisy corr:", r2)
assert r2 > 0.9
try:
    metrics.blink_recovery(lms, np.ones(T)); raise SystemExit("no const reject")
except DegenerateInputError as e:
    print("const reject:", e)
print("ALL METRICS SMOKE OK")
