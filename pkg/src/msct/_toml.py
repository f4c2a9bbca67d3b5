try:
    import tomllib as toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as toml

load = toml.load
loads = toml.loads
TOMLDecodeError = toml.TOMLDecodeError
