"""Cliff walking on a 4x12 grid, cells numbered row-major from the top left."""

ROWS, COLS = 4, 12
START, GOAL = 36, 47
CLIFF = range(37, 47)
MOVES = {0: (-1, 0), 1: (0, 1), 2: (1, 0), 3: (0, -1)}


class Environment:
    def __init__(self):
        self.state = START

    def reset(self, seed=None):
        self.state = START
        return [self.state]

    def set_state(self, state):
        values = list(state) if hasattr(state, "__iter__") else [state]
        if len(values) != 1 or int(values[0]) != values[0] or not 0 <= values[0] < ROWS * COLS:
            raise ValueError(f"expected a single cell index in [0, 48), got {state!r}")
        self.state = int(values[0])

    def step(self, action):
        if action not in MOVES:
            raise ValueError(f"invalid action {action!r}")
        dr, dc = MOVES[action]
        r, c = divmod(self.state, COLS)
        r = min(max(r + dr, 0), ROWS - 1)
        c = min(max(c + dc, 0), COLS - 1)
        nxt = r * COLS + c
        if nxt in CLIFF:
            self.state = START
            return [START], -100.0, False
        self.state = nxt
        return [nxt], -1.0, nxt == GOAL
