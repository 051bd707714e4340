// scratch: inspect alignment matrices at init
#include <cstdio>

#include "relmatch/learning.hpp"
#include "support/fixtures.hpp"

using namespace relmatch;

int main() {
  Sample s = testing::chain_sample(3, 4, 99);
  s.referent_box = s.scene.proposals[1].box;
  Model m = Model::create(testing::tiny_config(), Vocabulary::build({s}), 21);
  TableEncoder enc;
  Tape t;
  auto encd = encode_tokens(t, m, s, enc);
  auto f = build_candidate_features(t, m, s, encd);
  auto inputs = build_belief_inputs(t, m, f);
  std::vector<int> all = {0, 1, 2, 3};
  std::printf("rel_spo[0] norm = %g\n", f.rel_spo[0].val().norm());
  {
    Var mlp_out = m.sim_rel.trf(t, f.rel_spo[0]);
    std::printf("trf mlp(rel_spo[0]) norm = %g\n", mlp_out.val().norm());
    Var l1o = m.sim_rel.trf.l1(t, f.rel_spo[0]);
    std::printf("l1 out: ");
    for (int i = 0; i < l1o.rows(); ++i) std::printf(" %g", l1o.val()(i, 0));
    std::printf("\n");
    Var vr = f.visual_relation_raw(0, 1);
    std::printf("visual_relation_raw(0,1) norm = %g\n", vr.val().norm());
    Var mv = m.sim_rel.trf(t, vr);
    std::printf("trf mlp(vis) norm = %g\n", mv.val().norm());
  }
  for (int rel = 0; rel < 2; ++rel) {
    Var A = inputs.alignment(rel, all, all, nullptr);
    std::printf("relation %d alignment:\n", rel);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) std::printf(" %8.4f", A.val()(i, j));
      std::printf("\n");
    }
    // raw cosines before the clamp
    Var lang = f.trf_rel_language(rel);
    for (int kk = 0; kk < 4; ++kk)
      for (int ll = 0; ll < 4; ++ll) {
        if (kk == ll) continue;
        Var cosv = ad::dot(lang, f.trf_rel_visual(kk, ll));
        std::printf("  cos(%d,%d)=%.4f", kk, ll, cosv.scalar());
      }
    std::printf("\n");
  }
  return 0;
}
