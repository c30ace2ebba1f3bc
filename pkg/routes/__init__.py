# Replay server for recorded chat completions
from routes.replay import create_app, replay_bp
