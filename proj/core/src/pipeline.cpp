namespace recon {
}  // namespace recon
