#include "avatarforge/dataset.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace avatarforge {

namespace fs = std::filesystem;
using nlohmann::json;

void Intrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error("intrinsics: focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error("intrinsics: image size must be positive");
    if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
        throw Error("intrinsics: principal point outside the image");
    }
}

FrameDataset::FrameDataset(fs::path root, Intrinsics intrinsics, std::vector<FrameRecord> frames,
                           double fps)
    : root_(std::move(root)), intrinsics_(intrinsics), frames_(std::move(frames)), fps_(fps) {}

int FrameDataset::expression_size() const {
    return frames_.empty() ? 0 : static_cast<int>(frames_.front().expression.size());
}

int FrameDataset::landmark_count() const {
    return frames_.empty() ? 0 : static_cast<int>(frames_.front().landmarks.size());
}

Image FrameDataset::load_image(std::size_t i) const {
    return to_rgb(read_png(root_ / frame(i).image_path));
}

Image FrameDataset::load_mask(std::size_t i) const {
    Image mask = read_png(root_ / frame(i).mask_path);
    if (mask.channels() == 1) return mask;
    return select_channels(mask, {0});
}

std::vector<Image> FrameDataset::load_images() const {
    std::vector<Image> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(load_image(i));
    return out;
}

std::vector<Image> FrameDataset::load_masks() const {
    std::vector<Image> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.push_back(load_mask(i));
    return out;
}

Image FrameDataset::load_masked(std::size_t i, const Color& background) const {
    return masked(load_image(i), load_mask(i), background);
}

std::string frame_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d", index);
    return buf;
}

namespace {

[[noreturn]] void schema_error(const std::string& field, int frame = -1, const std::string& what = {}) {
    std::string msg = "manifest schema violation: field '" + field + "'";
    if (frame >= 0) msg += " at frame " + std::to_string(frame);
    if (!what.empty()) msg += ": " + what;
    throw Error(msg);
}

double number_field(const json& obj, const char* key, int frame = -1) {
    if (!obj.contains(key)) schema_error(key, frame, "missing");
    if (!obj[key].is_number()) schema_error(key, frame, "expected a number");
    return obj[key].get<double>();
}

std::string string_field(const json& obj, const char* key, int frame) {
    if (!obj.contains(key)) schema_error(key, frame, "missing");
    if (!obj[key].is_string()) schema_error(key, frame, "expected a string");
    return obj[key].get<std::string>();
}

const json& array_field(const json& obj, const char* key, int frame) {
    if (!obj.contains(key)) schema_error(key, frame, "missing");
    if (!obj[key].is_array()) schema_error(key, frame, "expected an array");
    return obj[key];
}

void check_rigid(const Eigen::Matrix4d& pose, int frame) {
    const Eigen::Matrix3d rot = pose.topLeftCorner<3, 3>();
    const double ortho_err = (rot.transpose() * rot - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho_err > 1e-5) schema_error("pose", frame, "rotation block is not orthonormal");
    if (rot.determinant() < 0.0) schema_error("pose", frame, "rotation has negative determinant");
    if (!pose.allFinite()) schema_error("pose", frame, "non-finite entry");
    const Eigen::RowVector4d last(0.0, 0.0, 0.0, 1.0);
    if ((pose.row(3) - last).cwiseAbs().maxCoeff() > 1e-9) {
        schema_error("pose", frame, "last row must be [0, 0, 0, 1]");
    }
}

FrameRecord parse_frame(const json& j, const Intrinsics& intr, std::size_t position) {
    int frame = static_cast<int>(position);
    if (!j.is_object()) schema_error("frames", frame, "expected an object");
    if (!j.contains("index") || !j["index"].is_number_integer()) schema_error("index", frame, "expected an integer");

    FrameRecord rec;
    rec.index = j["index"].get<int>();
    frame = rec.index;
    rec.image_path = string_field(j, "image", frame);
    rec.mask_path = string_field(j, "mask", frame);

    const json& pose = array_field(j, "pose", frame);
    if (pose.size() != 16) schema_error("pose", frame, "expected 16 numbers");
    for (int k = 0; k < 16; ++k) {
        if (!pose[k].is_number()) schema_error("pose", frame, "expected 16 numbers");
        rec.pose(k / 4, k % 4) = pose[k].get<double>();
    }
    check_rigid(rec.pose, frame);

    const json& expr = array_field(j, "expression", frame);
    rec.expression.resize(static_cast<Eigen::Index>(expr.size()));
    for (std::size_t k = 0; k < expr.size(); ++k) {
        if (!expr[k].is_number()) schema_error("expression", frame, "expected numbers");
        rec.expression[static_cast<Eigen::Index>(k)] = expr[k].get<double>();
    }
    if (!rec.expression.allFinite()) schema_error("expression", frame, "non-finite entry");

    for (const json& pt : array_field(j, "landmarks", frame)) {
        if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
            schema_error("landmarks", frame, "expected [x, y] pairs");
        }
        const Eigen::Vector2d p(pt[0].get<double>(), pt[1].get<double>());
        if (!(p.x() >= 0.0 && p.x() < intr.width && p.y() >= 0.0 && p.y() < intr.height)) {
            schema_error("landmarks", frame, "point outside image bounds");
        }
        rec.landmarks.push_back(p);
    }
    return rec;
}

json frame_to_json(const FrameRecord& rec) {
    json pose = json::array();
    for (int k = 0; k < 16; ++k) pose.push_back(rec.pose(k / 4, k % 4));
    json expr = json::array();
    for (Eigen::Index k = 0; k < rec.expression.size(); ++k) expr.push_back(rec.expression[k]);
    json lms = json::array();
    for (const auto& p : rec.landmarks) lms.push_back({p.x(), p.y()});
    return json{{"index", rec.index}, {"image", rec.image_path}, {"mask", rec.mask_path},
                {"pose", pose},       {"expression", expr},      {"landmarks", lms}};
}

}  // namespace

FrameDataset load_dataset(const fs::path& root) {
    const fs::path manifest_path = root / kManifestName;
    if (!fs::exists(manifest_path)) throw Error("missing manifest " + manifest_path.string());

    json j;
    {
        std::ifstream in(manifest_path);
        try {
            in >> j;
        } catch (const json::parse_error& e) {
            throw Error("cannot parse manifest " + manifest_path.string() + ": " + e.what());
        }
    }
    if (!j.is_object()) schema_error("<root>", -1, "expected an object");

    const double fps = number_field(j, "fps");
    if (!(fps > 0.0)) schema_error("fps", -1, "must be positive");

    if (!j.contains("intrinsics") || !j["intrinsics"].is_object()) schema_error("intrinsics", -1, "missing");
    const json& ji = j["intrinsics"];
    Intrinsics intr;
    intr.fx = number_field(ji, "fx");
    intr.fy = number_field(ji, "fy");
    intr.cx = number_field(ji, "cx");
    intr.cy = number_field(ji, "cy");
    intr.width = static_cast<int>(number_field(ji, "width"));
    intr.height = static_cast<int>(number_field(ji, "height"));
    intr.validate();

    std::vector<FrameRecord> frames;
    const json& jf = array_field(j, "frames", -1);
    for (std::size_t pos = 0; pos < jf.size(); ++pos) {
        FrameRecord rec = parse_frame(jf[pos], intr, pos);
        if (!frames.empty()) {
            const FrameRecord& first = frames.front();
            if (rec.index <= frames.back().index) {
                throw Error("frame indices not strictly increasing at frame " + std::to_string(rec.index));
            }
            if (rec.expression.size() != first.expression.size()) {
                throw Error("inconsistent expression length at frame " + std::to_string(rec.index));
            }
            if (rec.landmarks.size() != first.landmarks.size()) {
                throw Error("inconsistent landmark count at frame " + std::to_string(rec.index));
            }
        }
        for (const std::string* rel : {&rec.image_path, &rec.mask_path}) {
            const fs::path file = root / *rel;
            if (!fs::exists(file)) {
                throw Error("missing file \"" + *rel + "\" referenced by frame " + std::to_string(rec.index));
            }
            const auto dims = png_dimensions(file);
            if (dims[0] != intr.width || dims[1] != intr.height) {
                throw Error("resolution mismatch in \"" + *rel + "\": expected " + std::to_string(intr.width) +
                            "x" + std::to_string(intr.height));
            }
        }
        frames.push_back(std::move(rec));
    }
    return FrameDataset(root, intr, std::move(frames), fps);
}

void write_manifest(const fs::path& root, const Intrinsics& intrinsics, const std::vector<FrameRecord>& frames,
                    double fps) {
    json frames_json = json::array();
    for (const auto& rec : frames) frames_json.push_back(frame_to_json(rec));
    const json j{{"fps", fps},
                 {"intrinsics",
                  {{"fx", intrinsics.fx},
                   {"fy", intrinsics.fy},
                   {"cx", intrinsics.cx},
                   {"cy", intrinsics.cy},
                   {"width", intrinsics.width},
                   {"height", intrinsics.height}}},
                 {"frames", frames_json}};
    std::ofstream out(root / kManifestName);
    if (!out) throw Error("cannot write manifest in " + root.string());
    out << j.dump(2) << '\n';
    if (!out) throw Error("cannot write manifest in " + root.string());
}

FrameDataset write_dataset(const fs::path& root, const Intrinsics& intrinsics, std::vector<FrameRecord> frames,
                           double fps, const std::vector<Image>& images, const std::vector<Image>& masks) {
    if (images.size() != frames.size() || masks.size() != frames.size()) {
        throw Error("write_dataset: image/mask count does not match frame count");
    }
    std::error_code ec;
    fs::create_directories(root / "frames", ec);
    fs::create_directories(root / "masks", ec);
    if (ec) throw Error("cannot create dataset directory " + root.string() + ": " + ec.message());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        auto& rec = frames[i];
        rec.image_path = "frames/" + frame_stem(rec.index) + ".png";
        rec.mask_path = "masks/" + frame_stem(rec.index) + ".png";
        write_png(root / rec.image_path, images[i]);
        write_png(root / rec.mask_path, masks[i].channels() == 1 ? masks[i] : select_channels(masks[i], {0}));
    }
    write_manifest(root, intrinsics, frames, fps);
    return FrameDataset(root, intrinsics, std::move(frames), fps);
}

fs::path save_frameset(const FrameDataset& dataset, const std::vector<Image>& images, const fs::path& out,
                       const std::string& label) {
    if (images.size() != dataset.size()) {
        throw Error("save_frameset: " + std::to_string(images.size()) + " images for " +
                    std::to_string(dataset.size()) + " frames (count mismatch)");
    }
    const fs::path dir = out / label;
    std::error_code ec;
    fs::create_directories(dir / "masks", ec);
    if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());

    std::vector<FrameRecord> records = dataset.frames();
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& rec = records[i];
        const std::string stem = frame_stem(rec.index);
        write_png(dir / (stem + ".png"), images[i]);
        const fs::path mask_dst = dir / "masks" / (stem + ".png");
        fs::copy_file(dataset.root() / rec.mask_path, mask_dst, fs::copy_options::overwrite_existing, ec);
        if (ec) throw Error("cannot copy mask to " + mask_dst.string() + ": " + ec.message());
        rec.image_path = stem + ".png";
        rec.mask_path = "masks/" + stem + ".png";
    }
    write_manifest(dir, dataset.intrinsics(), records, dataset.fps());
    return dir;
}

Image masked(const Image& image, const Image& mask, const Color& background) {
    if (mask.channels() != 1) throw Error("masked: mask must be single-channel");
    if (!image.same_size(mask)) throw Error("masked: image and mask sizes differ");
    Image out(image.width(), image.height(), image.channels());
    const int channels = image.channels();
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const float m = mask.at(x, y, 0);
            for (int c = 0; c < channels; ++c) {
                const float bg = background[static_cast<std::size_t>(std::min(c, 2))];
                out.at(x, y, c) = m * image.at(x, y, c) + (1.0f - m) * bg;
            }
        }
    }
    return out;
}

}  // namespace avatarforge
