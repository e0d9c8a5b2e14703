# NCS Testbed 核心模組
# 網路控制系統測試平台：受控體、PI 控制器、網路通道、模擬引擎、GA 調整與即時節點
