#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vxls/network.hpp"
#include "vxls/ops.hpp"
#include "vxls/rng.hpp"

using namespace vxls;
namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_config(XlstmPlacement placement = XlstmPlacement::bot) {
    NetworkConfig cfg;
    cfg.stages = 3;
    cfg.base_channels = 2;
    cfg.blocks_per_stage = 1;
    cfg.patch_dims = {8, 8, 8};
    cfg.placement = placement;
    return cfg;
}

std::string tmp(const std::string& n) { return (fs::temp_directory_path() / n).string(); }

}  // namespace

TEST_CASE("forward shape contract and finiteness") {
    Model m = Model::build(tiny_config(), ModelKind::segmentation, 1);
    Rng rng(2);
    Tensor x = random_normal<float>(Shape{1, 2, 8, 8, 8}, rng);
    Tape tp;
    Tensor y = m.forward_eval(tp, x);
    CHECK(y.shape == Shape{1, 2, 8, 8, 8});
    for (float v : y.data()) CHECK(std::isfinite(v));

    // all-zero input through a fresh model stays finite
    Tensor zero(Shape{1, 2, 8, 8, 8});
    Tape tp2;
    Tensor yz = m.forward_eval(tp2, zero);
    for (float v : yz.data()) CHECK(std::isfinite(v));

    CHECK_THROWS_AS((void)m.forward_eval(tp, Tensor(Shape{1, 2, 6, 8, 8}, 0.f)), ShapeMismatch);
    CHECK_THROWS_AS((void)m.forward_eval(tp, Tensor(Shape{1, 3, 8, 8, 8}, 0.f)), ShapeMismatch);
}

TEST_CASE("batch independence: swapping batch items permutes outputs") {
    Model m = Model::build(tiny_config(), ModelKind::segmentation, 3);
    Rng rng(4);
    Tensor a = random_normal<float>(Shape{1, 2, 8, 8, 8}, rng);
    Tensor b = random_normal<float>(Shape{1, 2, 8, 8, 8}, rng);
    const std::int64_t n = a.numel();
    Tensor ab(Shape{2, 2, 8, 8, 8}), ba(Shape{2, 2, 8, 8, 8});
    std::copy(a.data().begin(), a.data().end(), ab.mut().begin());
    std::copy(b.data().begin(), b.data().end(), ab.mut().begin() + n);
    std::copy(b.data().begin(), b.data().end(), ba.mut().begin());
    std::copy(a.data().begin(), a.data().end(), ba.mut().begin() + n);
    Tape t1, t2;
    Tensor y1 = m.forward_eval(t1, ab);
    Tensor y2 = m.forward_eval(t2, ba);
    for (std::int64_t i = 0; i < n; ++i) {
        CHECK(y1.data()[static_cast<std::size_t>(i)] == y2.data()[static_cast<std::size_t>(n + i)]);
        CHECK(y1.data()[static_cast<std::size_t>(n + i)] == y2.data()[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("placement variants differ only in xlstm parameter names") {
    Model bot = Model::build(tiny_config(XlstmPlacement::bot), ModelKind::segmentation, 5);
    Model enc = Model::build(tiny_config(XlstmPlacement::enc), ModelKind::segmentation, 5);
    Model none = Model::build(tiny_config(XlstmPlacement::none), ModelKind::segmentation, 5);

    auto xlstm_blocks = [](const Model& m) {
        std::vector<std::string> hit;
        for (const auto& [name, t] : m.params.by_name)
            if (name.find("xlstm") != std::string::npos) hit.push_back(name);
        return hit;
    };
    CHECK(xlstm_blocks(none).empty());
    CHECK(xlstm_blocks(bot).size() == 18);       // norm(2) + 2 directions x 8
    CHECK(xlstm_blocks(enc).size() == 18 * 3);   // one block per stage

    for (const auto& [name, t] : bot.params.by_name) {
        if (name.find("xlstm") != std::string::npos) continue;
        REQUIRE(enc.params.has(name));
        REQUIRE(none.params.has(name));
        // shared parameters are bit-identical across variants (name-keyed init)
        CHECK(t.data() == enc.params.at(name).data());
        CHECK(t.data() == none.params.at(name).data());
    }
}

TEST_CASE("seeded determinism: two builds agree bit for bit") {
    Model a = Model::build(tiny_config(), ModelKind::segmentation, 77);
    Model b = Model::build(tiny_config(), ModelKind::segmentation, 77);
    Model c = Model::build(tiny_config(), ModelKind::segmentation, 78);
    REQUIRE(a.params.size() == b.params.size());
    bool all_equal_77 = true, any_diff_78 = false;
    for (const auto& [name, t] : a.params.by_name) {
        all_equal_77 &= t.data() == b.params.at(name).data();
        any_diff_78 |= t.data() != c.params.at(name).data();
    }
    CHECK(all_equal_77);
    CHECK(any_diff_78);
}

TEST_CASE("residual identity: zeroed xlstm makes all placements agree bitwise") {
    Model bot = Model::build(tiny_config(XlstmPlacement::bot), ModelKind::segmentation, 6);
    Model enc = Model::build(tiny_config(XlstmPlacement::enc), ModelKind::segmentation, 6);
    Model none = Model::build(tiny_config(XlstmPlacement::none), ModelKind::segmentation, 6);
    CHECK(bot.zero_params_matching("xlstm") == 18);
    CHECK(enc.zero_params_matching("xlstm") == 54);

    Rng rng(7);
    Tensor x = random_normal<float>(Shape{1, 2, 8, 8, 8}, rng);
    Tape t1, t2, t3;
    Tensor yb = bot.forward_eval(t1, x);
    Tensor ye = enc.forward_eval(t2, x);
    Tensor yn = none.forward_eval(t3, x);
    for (std::size_t i = 0; i < yb.data().size(); ++i) {
        CHECK(yb.data()[i] == ye.data()[i]);
        CHECK(yb.data()[i] == yn.data()[i]);
    }
}

TEST_CASE("encoder names are shared between MAE and segmentation models") {
    Model seg = Model::build(tiny_config(), ModelKind::segmentation, 8);
    Model mae = Model::build(tiny_config(), ModelKind::mae, 8);
    std::vector<std::string> seg_enc, mae_enc;
    for (const auto& [name, t] : seg.params.by_name)
        if (name.rfind("enc.", 0) == 0) seg_enc.push_back(name);
    for (const auto& [name, t] : mae.params.by_name)
        if (name.rfind("enc.", 0) == 0) mae_enc.push_back(name);
    CHECK(seg_enc == mae_enc);
    // and their shapes agree
    for (const auto& n : seg_enc) CHECK(seg.params.at(n).shape == mae.params.at(n).shape);
    // MAE reconstruction head emits in_channels
    Rng rng(9);
    Tensor x = random_normal<float>(Shape{1, 2, 8, 8, 8}, rng);
    Tape tp;
    CHECK(mae.forward_eval(tp, x).shape == Shape{1, 2, 8, 8, 8});
}

TEST_CASE("checkpoint round trip is bit-exact") {
    Model m = Model::build(tiny_config(), ModelKind::segmentation, 10);
    const std::string path = tmp("vxls_ckpt_rt.ckpt");
    save_checkpoint(m, path, "finetuned");
    std::string stage;
    Model r = load_checkpoint(path, &stage);
    CHECK(stage == "finetuned");
    CHECK(r.kind == ModelKind::segmentation);
    REQUIRE(r.params.size() == m.params.size());
    for (const auto& [name, t] : m.params.by_name) CHECK(r.params.at(name).data() == t.data());
}

TEST_CASE("MAE encoder transfer: copied vs fresh parameters") {
    Model mae = Model::build(tiny_config(), ModelKind::mae, 11);
    for (auto& [name, t] : mae.params.by_name)
        for (auto& v : t.mut()) v += 1.f;  // make the pretrained weights distinctive
    const std::string path = tmp("vxls_ckpt_mae.ckpt");
    save_checkpoint(mae, path, "mae_pretrained");

    Model seg = Model::build(tiny_config(), ModelKind::segmentation, 12);
    Model fresh = Model::build(tiny_config(), ModelKind::segmentation, 12);
    Model loaded = load_checkpoint(path);
    LoadReport rep = load_encoder_into(seg, loaded);
    int n_enc = 0, n_other = 0;
    for (const auto& [name, t] : seg.params.by_name) {
        if (name.rfind("enc.", 0) == 0) {
            ++n_enc;
            CHECK(t.data() == mae.params.at(name).data());
        } else {
            ++n_other;
            CHECK(t.data() == fresh.params.at(name).data());  // untouched
        }
    }
    CHECK(rep.copied == n_enc);
    CHECK(rep.fresh == n_other);
}

TEST_CASE("checkpoint error paths: version and payload corruption") {
    Model m = Model::build(tiny_config(), ModelKind::segmentation, 13);
    const std::string path = tmp("vxls_ckpt_bad.ckpt");
    save_checkpoint(m, path, "finetuned");

    // corrupt version field
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const std::uint32_t bad = 999;
        f.write(reinterpret_cast<const char*>(&bad), 4);
    }
    CHECK_THROWS_AS((void)load_checkpoint(path), VersionMismatch);

    // truncate payload
    save_checkpoint(m, path, "finetuned");
    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 64);
    CHECK_THROWS_AS((void)load_checkpoint(path), ShapeConflict);

    CHECK_THROWS_AS((void)load_checkpoint(tmp("vxls_missing.ckpt")), IoError);
}

TEST_CASE("config validation") {
    NetworkConfig cfg = tiny_config();
    cfg.patch_dims = {6, 8, 8};  // not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_config();
    cfg.stages = 1;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    CHECK_THROWS_AS((void)placement_from_string("middle"), InvalidConfig);
}
