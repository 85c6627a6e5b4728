// End-to-end walk through the library on a small synthetic gallery: collect
// scarf samples, compress them with K-SVD, then classify scarf-occluded faces
// with and without the occlusion dictionary.

#include <cstdio>

#include "soc/classifier.hpp"
#include "soc/learning.hpp"
#include "soc/synth.hpp"

using namespace soc;

int main() {
  SynthSpec spec;
  spec.classes = 10;
  spec.noise_sigma = 0.01;
  const FaceModel model(spec);
  const int fh = 12, fw = 10;

  // Centroid-difference samples at full resolution, one per class.
  const BlockedDictionary full = gallery_dictionary(model, spec.height, spec.width);
  OcclusionSampleSet samples;
  samples.category = "scarf";
  samples.strategy = Strategy::Esrc;
  for (int c = 0; c < spec.classes; ++c)
    for (int j = 0; j < 3; ++j) {
      const OccludedImage o = apply_occlusion(model.image(c, 100 + j), "scarf", spec, std::uint64_t(c * 3 + j));
      samples.add(collect_esrc(normalized(o.occluded), full.sub_dictionary(class_label(c))));
    }

  KsvdConfig kc;
  kc.atom_count = 15;
  const KsvdResult k = ksvd_train(samples.downsampled(fh, fw), kc);
  std::printf("K-SVD: %lld samples -> %lld atoms, error %.4f -> %.4f\n", (long long)samples.p(),
              (long long)k.dictionary.n(), k.error_trace.front(), k.error_trace.back());

  const BlockedDictionary faces = gallery_dictionary(model, fh, fw);
  const BlockedDictionary R = build_compound({faces}, {k.dictionary});
  ClassifierConfig cc;
  cc.solver.epsilon = 0.01;
  ClassifierConfig plain = cc;
  plain.sparsity_mode = SparsityMode::L1;

  int with_dict = 0, faces_only = 0, total = 0;
  for (int c = 0; c < spec.classes; ++c)
    for (int j = 0; j < 3; ++j) {
      const OccludedImage o = apply_occlusion(model.image(c, 7 + j), "scarf", spec, 5000u + std::uint64_t(c * 3 + j));
      const ImageVector u = normalized(downsample(o.occluded, fh, fw));
      with_dict += classify(u, R, cc).best_face == class_label(c);
      faces_only += classify(u, build_compound({faces}, {}), plain).best_face == class_label(c);
      ++total;
    }
  std::printf("scarf-occluded faces: %d/%d with the occlusion dictionary, %d/%d with faces alone\n", with_dict,
              total, faces_only, total);
  return 0;
}
