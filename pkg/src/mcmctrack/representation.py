"""Two equivalent parameterisations of a multi-target configuration.

The sampler reasons in *tracks* (birth frame + state sequence per target); the
model's discrete prior is stated over per-frame *sequences* (survival vectors,
birth counts, stacked states).  The two are in bijection once labels follow
the canonical rule: targets are labelled by birth frame, and targets born in
the same frame are ordered by ascending initial intensity (position breaks
exact ties).  Within a frame, survivors come first in ancestor order, then the
newborns in that canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Track, canonical_order


@dataclass
class MttSequence:
    """Per-frame form of a configuration.

    survivals[t] (t >= 1) flags which of frame t-1's targets are alive in
    frame t; survivals[0] is empty.  states[t] stacks frame t's states, shape
    (k_x(t), 5): survivors first, then newborns.
    """

    survivals: list
    states: list

    def __post_init__(self):
        self.survivals = [np.asarray(c, dtype=bool) for c in self.survivals]
        self.states = [np.asarray(x, dtype=float).reshape(-1, 5) for x in self.states]
        if len(self.survivals) != len(self.states):
            raise ValueError("survivals and states must cover the same frames")
        if len(self.states) == 0:
            raise ValueError("at least one frame required")
        if self.survivals[0].size != 0:
            raise ValueError("frame 0 has no predecessors")
        for t in range(1, self.n_frames):
            if self.survivals[t].size != self.states[t - 1].shape[0]:
                raise ValueError(f"survival vector at frame {t} has wrong length")
            if int(self.survivals[t].sum()) > self.states[t].shape[0]:
                raise ValueError(f"more survivors than targets at frame {t}")

    @property
    def n_frames(self):
        return len(self.states)

    def k_x(self, t):
        return self.states[t].shape[0]

    def k_s(self, t):
        return 0 if t == 0 else int(self.survivals[t].sum())

    def k_b(self, t):
        return self.k_x(t) - self.k_s(t)

    def ordering_ok(self):
        """True iff every newborn block is sorted by (a, s1, s2)."""
        for t in range(self.n_frames):
            block = self.states[t][self.k_s(t):, :3]
            for j in range(1, block.shape[0]):
                if tuple(block[j]) < tuple(block[j - 1]):
                    return False
        return True


def tracks_from_mtt(seq: MttSequence):
    """Convert the sequence form into canonically labelled tracks."""
    open_tracks = []      # per current slot: list of state rows so far
    open_birth = []
    finished = []

    def close(idx_list):
        for i in idx_list:
            finished.append(Track(open_birth[i], np.array(open_tracks[i])))

    for t in range(seq.n_frames):
        x = seq.states[t]
        if t == 0:
            next_tracks = []
            next_birth = []
        else:
            surv = seq.survivals[t]
            close([i for i in range(len(open_tracks)) if not surv[i]])
            keep = [i for i in range(len(open_tracks)) if surv[i]]
            next_tracks = [open_tracks[i] for i in keep]
            next_birth = [open_birth[i] for i in keep]
            for j in range(len(keep)):
                next_tracks[j].append(x[j])
        for j in range(seq.k_s(t), seq.k_x(t)):
            next_tracks.append([x[j]])
            next_birth.append(t)
        open_tracks, open_birth = next_tracks, next_birth
    close(range(len(open_tracks)))
    return canonical_order(finished)


def mtt_from_tracks(tracks, n_frames=None):
    """Convert tracks into the sequence form (canonical slot order)."""
    tracks = canonical_order(tracks)
    n = n_frames if n_frames is not None else max((tr.end for tr in tracks), default=1)
    if any(tr.end > n for tr in tracks):
        raise ValueError("track extends past the final frame")
    survivals = [np.zeros(0, dtype=bool)]
    states = []
    slots = []  # track objects occupying frame t-1's slots
    for t in range(n):
        if t > 0:
            surv = np.array([tr.alive_at(t) for tr in slots], dtype=bool)
            survivals.append(surv)
            new_slots = [tr for tr in slots if tr.alive_at(t)]
        else:
            new_slots = []
        newborn = [tr for tr in tracks if tr.tb == t]
        new_slots.extend(newborn)
        if new_slots:
            states.append(np.array([tr.state_at(t) for tr in new_slots]))
        else:
            states.append(np.zeros((0, 5)))
        slots = new_slots
    return MttSequence(survivals, states)
