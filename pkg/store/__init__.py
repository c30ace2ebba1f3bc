from store.artifacts import (
    ArtifactError,
    MissingArtifacts,
    MixedManifests,
    RunManifest,
    read_jsonl,
    read_manifest,
    read_trajectories,
    write_aggregate,
    write_analyses,
    write_jsonl,
    write_manifest,
    write_trajectories,
)
