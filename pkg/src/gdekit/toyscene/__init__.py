from .lights import SHAPES, ToyLight, default_probe_lights, first_light_hit, toy_env_radiance
from .preconv import preconvolve, preconvolve_oracle, sample_vmf_local
from .room import (
    RoomConfig,
    SyntheticDataset,
    generate_synthetic_room,
    load_dataset,
    render_room,
    room_cameras,
    save_dataset,
)
