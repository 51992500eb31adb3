"""
Split manifests
===============

Benchmarks are described by plain-text pair lists and a sample index. The
package ships count-faithful manifests for three benchmarks; the same
format can be written for the synthetic data.
"""

import tempfile

from czsl_stagewise.workbench.splits import BUNDLED, bundled_path, load_splits, write_manifest
from czsl_stagewise.workbench.synthetic import SyntheticTaskSpec, gen_synthetic

for name in BUNDLED:
    manifest, space = load_splits(bundled_path(name))
    print("%-11s %3d states %3d objects" % (name, len(manifest.states), len(manifest.objects)),
          manifest.counts())
    print("            closed-world test candidates:", len(space.candidates()),
          " open world:", len(space.with_world("open").candidates()))

out = write_manifest(tempfile.mkdtemp(), gen_synthetic(SyntheticTaskSpec(seed=0)))
print(sorted(p.name for p in out.iterdir()))
print(load_splits(out)[0].counts())
