#include "avatarforge/avatar.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace avatarforge {

namespace {

constexpr char kMagic[8] = {'A', 'V', 'F', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
    }
    return v;
}

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw Error("cannot open checkpoint for writing: " + path.string());
    }
    template <typename T>
    void put(T v) {
        v = to_little(v);
        out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void put_array(const std::vector<double>& values) {
        for (double v : values) put(static_cast<float>(v));
    }
    void bytes(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }
    void finish() {
        out_.flush();
        if (!out_) throw Error("failed writing checkpoint " + path_.string());
    }

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw Error("cannot open checkpoint: " + path.string());
    }
    template <typename T>
    T get() {
        T v;
        in_.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in_) throw Error("truncated checkpoint " + path_.string());
        return to_little(v);
    }
    void get_array(std::vector<double>& values) {
        for (auto& v : values) v = static_cast<double>(get<float>());
    }
    void bytes(char* data, std::size_t n) {
        in_.read(data, static_cast<std::streamsize>(n));
        if (!in_) throw Error("truncated checkpoint " + path_.string());
    }

private:
    std::ifstream in_;
    std::filesystem::path path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AvatarModel& model) {
    Writer w(path);
    w.bytes(kMagic, sizeof(kMagic));
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.grid.resolution));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.basis.resolution));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(model.basis.count));
    for (float c : model.background) w.put<float>(c);
    w.put<std::uint64_t>(model.optimizer.step);
    const bool has_moments = model.optimizer.first_moment.size() == model.parameter_count();
    w.put<std::uint32_t>(has_moments ? 1u : 0u);
    w.put_array(model.grid.density_raw);
    w.put_array(model.grid.color_raw);
    w.put_array(model.basis.weights);
    if (has_moments) {
        w.put_array(model.optimizer.first_moment);
        w.put_array(model.optimizer.second_moment);
    }
    w.finish();
}

AvatarModel load_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    char magic[8];
    r.bytes(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw Error("not an avatar checkpoint: " + path.string());
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    const auto res = r.get<std::uint32_t>();
    const auto basis_res = r.get<std::uint32_t>();
    const auto count = r.get<std::uint32_t>();
    if (res < 2 || res > 1024 || basis_res < 2 || basis_res > 256 || count > 1024) {
        throw Error("implausible checkpoint header in " + path.string());
    }

    AvatarModel model = make_avatar({static_cast<int>(res), static_cast<int>(basis_res), static_cast<int>(count)});
    for (float& c : model.background) c = r.get<float>();
    model.optimizer.step = r.get<std::uint64_t>();
    const bool has_moments = r.get<std::uint32_t>() != 0;
    r.get_array(model.grid.density_raw);
    r.get_array(model.grid.color_raw);
    r.get_array(model.basis.weights);
    if (has_moments) {
        model.optimizer.first_moment.resize(model.parameter_count());
        model.optimizer.second_moment.resize(model.parameter_count());
        r.get_array(model.optimizer.first_moment);
        r.get_array(model.optimizer.second_moment);
    }
    check_finite(model);
    return model;
}

}  // namespace avatarforge
