#include "advmr/dataset.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include <json.hpp>

#include "advmr/errors.hpp"
#include "advmr/runio.hpp"

namespace advmr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMajor = 1;
constexpr int kMinor = 0;

// blob encoding: f64 little-endian; real tensors one value per element,
// complex tensors re,im interleaved (see docs/format.md)
void append_real(std::string& buf, const Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double v = double(t[i].real());
        char raw[8];
        std::memcpy(raw, &v, 8);
        buf.append(raw, 8);
    }
}

void append_complex(std::string& buf, const Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        const double v[2] = {double(t[i].real()), double(t[i].imag())};
        char raw[16];
        std::memcpy(raw, v, 16);
        buf.append(raw, 16);
    }
}

void read_real(const std::string& buf, std::size_t& pos, Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v;
        std::memcpy(&v, buf.data() + pos, 8);
        pos += 8;
        t[i] = cplx(real_t(v), 0);
    }
}

void read_complex(const std::string& buf, std::size_t& pos, Tensor& t) {
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double v[2];
        std::memcpy(v, buf.data() + pos, 16);
        pos += 16;
        t[i] = cplx(real_t(v[0]), real_t(v[1]));
    }
}

std::string record_id(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "p%04zu", i);
    return buf;
}

[[noreturn]] void fail(DataError::Code code, const std::string& msg) {
    throw DataError(code, msg);
}

} // namespace

void save_dataset(const std::string& path, const std::vector<Phantom>& set) {
    if (set.empty())
        throw Error("save_dataset: empty phantom set");

    const fs::path final_dir(path);
    const fs::path tmp_dir(path + ".tmp." + std::to_string(::getpid()));
    std::error_code ec;
    fs::remove_all(tmp_dir, ec);
    if (!fs::create_directories(tmp_dir / "blobs", ec) || ec)
        fail(DataError::Code::io, "cannot create " + tmp_dir.string() + ": " + ec.message());

    json records = json::array();
    for (std::size_t i = 0; i < set.size(); ++i) {
        const Phantom& p = set[i];
        const std::string id = record_id(i);

        std::string blob;
        append_real(blob, p.image);
        append_complex(blob, p.maps.maps);
        append_real(blob, p.background_mask);
        const std::uint32_t crc = crc32(blob.data(), blob.size());

        {
            std::ofstream f(tmp_dir / "blobs" / (id + ".bin"), std::ios::binary);
            f.write(blob.data(), std::streamsize(blob.size()));
            if (!f)
                fail(DataError::Code::io, "write failed for blob " + id);
        }

        json ann = json::array();
        for (const AnnotationBox& b : p.annotations)
            ann.push_back({{"x", b.x}, {"y", b.y}, {"width", b.width}, {"height", b.height}, {"label", b.label}});
        records.push_back({{"id", id},
                           {"seed", p.seed},
                           {"h", p.h()},
                           {"w", p.w()},
                           {"coils", p.maps.num_coils()},
                           {"annotations", ann},
                           {"bytes", blob.size()},
                           {"crc32", crc}});
    }

    json manifest = {{"format", "advmr-dataset"},
                     {"version", {{"major", kMajor}, {"minor", kMinor}}},
                     {"dtype", "f64le"},
                     {"records", records}};
    {
        std::ofstream f(tmp_dir / "manifest.json");
        f << manifest.dump(2) << "\n";
        if (!f)
            fail(DataError::Code::io, "write failed for manifest");
    }

    fs::remove_all(final_dir, ec); // replace an existing dataset atomically-ish
    ec.clear();
    fs::rename(tmp_dir, final_dir, ec);
    if (ec)
        fail(DataError::Code::io, "cannot move dataset into place: " + ec.message());
}

std::vector<Phantom> load_dataset(const std::string& path) {
    const fs::path dir(path);
    if (!fs::exists(dir / "manifest.json"))
        fail(DataError::Code::missing, "no manifest at " + (dir / "manifest.json").string());

    json manifest;
    try {
        manifest = json::parse(read_text((dir / "manifest.json").string()));
    } catch (const json::exception& e) {
        fail(DataError::Code::malformed, "manifest parse error: " + std::string(e.what()));
    }

    if (!manifest.contains("format") || manifest["format"] != "advmr-dataset")
        fail(DataError::Code::malformed, "not an advmr dataset manifest");
    const int major = manifest["version"]["major"].get<int>();
    if (major != kMajor)
        fail(DataError::Code::version_mismatch,
             "dataset major version " + std::to_string(major) + ", reader supports " + std::to_string(kMajor));
    if (manifest["dtype"] != "f64le")
        fail(DataError::Code::malformed, "unsupported dtype " + manifest["dtype"].get<std::string>());

    std::vector<Phantom> out;
    try {
        for (const json& rec : manifest["records"]) {
            const std::string id = rec["id"].get<std::string>();
            const int h = rec["h"].get<int>(), w = rec["w"].get<int>(), coils = rec["coils"].get<int>();
            if (h < 1 || w < 1 || coils < 1)
                fail(DataError::Code::malformed, "record " + id + " has degenerate shape");
            const std::size_t expect = rec["bytes"].get<std::size_t>();
            const std::uint32_t crc_want = rec["crc32"].get<std::uint32_t>();

            const fs::path bpath = dir / "blobs" / (id + ".bin");
            if (!fs::exists(bpath))
                fail(DataError::Code::missing, "blob missing for record " + id);
            const std::string blob = read_text(bpath.string());
            const std::size_t need =
                std::size_t(h) * w * 8 + std::size_t(coils) * h * w * 16 + std::size_t(h) * w * 8;
            if (expect != need)
                fail(DataError::Code::malformed, "record " + id + " declares " + std::to_string(expect) +
                                                     " bytes, shape needs " + std::to_string(need));
            if (blob.size() < expect)
                fail(DataError::Code::truncated, "record " + id + ": blob has " + std::to_string(blob.size()) +
                                                     " of " + std::to_string(expect) + " bytes");
            if (blob.size() > expect)
                fail(DataError::Code::malformed, "record " + id + ": blob larger than declared");
            if (crc32(blob.data(), blob.size()) != crc_want)
                fail(DataError::Code::checksum_mismatch, "record " + id + ": checksum mismatch");

            Phantom p;
            p.seed = rec["seed"].get<std::uint64_t>();
            p.image = Tensor({h, w});
            p.maps.maps = Tensor({coils, h, w});
            p.background_mask = Tensor({h, w});
            std::size_t pos = 0;
            read_real(blob, pos, p.image);
            read_complex(blob, pos, p.maps.maps);
            read_real(blob, pos, p.background_mask);
            for (const json& a : rec["annotations"]) {
                AnnotationBox b;
                b.x = a["x"].get<int>();
                b.y = a["y"].get<int>();
                b.width = a["width"].get<int>();
                b.height = a["height"].get<int>();
                b.label = a["label"].get<std::string>();
                p.annotations.push_back(std::move(b));
            }
            out.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        fail(DataError::Code::malformed, "manifest field error: " + std::string(e.what()));
    }
    return out;
}

} // namespace advmr
