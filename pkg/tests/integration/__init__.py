"""
集成测试包 - 包含所有集成测试模块
""" 