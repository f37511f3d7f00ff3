from environment import Environment


def test_reset_starts_bottom_left():
    env = Environment()
    assert list(env.reset(seed=0)) == [36]


def test_cliff_costs_100_and_returns_to_start():
    env = Environment()
    env.reset(seed=0)
    obs, reward, done = env.step(1)
    assert list(obs) == [36]
    assert reward == -100
    assert done is False


def test_goal_ends_episode():
    env = Environment()
    env.set_state([35])
    obs, reward, done = env.step(2)
    assert list(obs) == [47]
    assert reward == -1
    assert done is True
